/** Typed client for the gateway. Only documented endpoints, no client-side
 * state beyond the bearer token. */

import type { DecisionResult, MetricsView, PendingItem, TxRow } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Network-level failure (gateway unreachable), distinct from HTTP errors. */
export class ConnectionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConnectionError";
  }
}

type FetchLike = typeof fetch;

export class GatewayClient {
  constructor(
    private baseUrl: string,
    private token: string | null,
    private fetchImpl: FetchLike = fetch,
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ConnectionError(`gateway unreachable: ${String(err)}`);
    }
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      // non-JSON body; fall through with null payload
    }
    if (!response.ok) {
      const error = (payload as { error?: { code?: string; message?: string } })?.error;
      throw new ApiError(
        response.status,
        error?.code ?? `HTTP_${response.status}`,
        error?.message ?? response.statusText,
      );
    }
    return payload as T;
  }

  async listPending(): Promise<PendingItem[]> {
    const body = await this.request<{ pending: PendingItem[] }>("GET", "/pending");
    return body.pending;
  }

  async decide(pendingId: string, decision: "approve" | "revoke"): Promise<DecisionResult> {
    return this.request<DecisionResult>("POST", `/pending/${pendingId}/decision`, { decision });
  }

  async transactions(params: Record<string, string> = {}): Promise<TxRow[]> {
    const query = new URLSearchParams(params).toString();
    const path = query ? `/transactions?${query}` : "/transactions";
    const body = await this.request<{ transactions: TxRow[] }>("GET", path);
    return body.transactions;
  }

  async metrics(): Promise<MetricsView> {
    return this.request<MetricsView>("GET", "/metrics");
  }
}
