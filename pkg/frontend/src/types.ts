/** Shapes returned by the gateway REST API, as consumed by the console. */

export type PendingState = "awaiting" | "decided" | "expired";

export interface PendingTx {
  device_id: string;
  kind: string;
  params: Record<string, string>;
  issuer: string;
  status: string;
}

export interface PendingContext {
  groups_count?: number;
  entry_count?: number;
  snapshot_age_ms?: number;
  built_at?: number;
  context_fingerprint?: string;
  physical?: { source: string; quantity: string; value: string }[];
}

export interface PendingItem {
  pending_id: string;
  tx_id: string;
  reasons: string[];
  context: PendingContext;
  enqueued_at: number;
  state: PendingState;
  decision: { principal_id: string; decision: string; decided_at: number } | null;
  tx?: PendingTx;
}

export interface DecisionResult extends PendingItem {
  tx_status?: string;
}

export interface TxRow {
  tx_id: string;
  device_id: string;
  kind: string;
  params: Record<string, string>;
  issuer: string;
  submitted_at: number;
  status: string;
  block_index: number | null;
}

export interface MetricsCounts {
  [status: string]: number;
}

export interface MetricsView {
  counts: MetricsCounts;
  evaluations: { index: number; tx_id: string; outcome: string }[];
}
