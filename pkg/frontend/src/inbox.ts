/** Pending-verification inbox: cards for held transactions with the
 * reasons and context summary that flagged them, and explicit
 * approve/revoke actions. Decisions are optimistic and roll back when
 * the server reports the item was already decided elsewhere. Nothing is
 * ever decided without a click on that specific card. */

import { ApiError } from "./api.js";
import type { DecisionResult, PendingItem } from "./types.js";

type ItemNote = { kind: "info" | "error"; text: string };

/** The one server call the inbox needs; satisfied by GatewayClient. */
export interface DecisionClient {
  decide(pendingId: string, decision: "approve" | "revoke"): Promise<DecisionResult>;
}

export class InboxController {
  private items: PendingItem[] = [];
  private deciding = new Set<string>();
  private optimistic = new Map<string, string>(); // pending_id -> decision sent
  private notes = new Map<string, ItemNote>();

  constructor(
    private root: HTMLElement,
    private client: DecisionClient,
    private onAuthRequired: () => void,
    private requestRefresh: () => void,
  ) {}

  /** Replace local state with the latest poll result and re-render. */
  update(items: PendingItem[]): void {
    this.items = [...items].sort((a, b) => b.enqueued_at - a.enqueued_at);
    for (const item of this.items) {
      if (item.state !== "awaiting") {
        this.deciding.delete(item.pending_id);
        this.optimistic.delete(item.pending_id);
      }
    }
    this.render();
  }

  awaitingCount(): number {
    return this.items.filter((i) => i.state === "awaiting").length;
  }

  async decide(pendingId: string, decision: "approve" | "revoke"): Promise<void> {
    this.deciding.add(pendingId);
    this.optimistic.set(pendingId, decision);
    this.notes.delete(pendingId);
    this.render();
    try {
      const result = await this.client.decide(pendingId, decision);
      const note =
        decision === "revoke"
          ? "Revoked. This transaction will enter provenance as Rejected."
          : `Approved. Transaction is now ${result.tx_status ?? "Executed"}.`;
      this.notes.set(pendingId, { kind: "info", text: note });
      const local = this.items.find((i) => i.pending_id === pendingId);
      if (local) {
        local.state = "decided";
        local.decision = result.decision;
      }
    } catch (err) {
      this.optimistic.delete(pendingId);
      if (err instanceof ApiError && err.status === 401) {
        this.onAuthRequired();
        return;
      }
      if (err instanceof ApiError && err.code === "ALREADY_DECIDED") {
        this.notes.set(pendingId, {
          kind: "info",
          text: "Already decided elsewhere; refreshing.",
        });
        this.requestRefresh();
      } else if (err instanceof ApiError && err.status === 403) {
        this.notes.set(pendingId, {
          kind: "error",
          text: `Not authorized: ${err.message}`,
        });
      } else {
        this.notes.set(pendingId, { kind: "error", text: String(err) });
      }
    } finally {
      this.deciding.delete(pendingId);
      this.render();
    }
  }

  private render(): void {
    this.root.textContent = "";
    const awaiting = this.items.filter((i) => i.state === "awaiting");
    const decided = this.items.filter((i) => i.state !== "awaiting");
    if (this.items.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent = "No transactions are waiting for verification.";
      this.root.appendChild(empty);
      return;
    }
    for (const item of [...awaiting, ...decided]) {
      this.root.appendChild(this.card(item));
    }
  }

  private card(item: PendingItem): HTMLElement {
    const card = document.createElement("article");
    card.className = `pending-card state-${item.state}`;
    card.dataset.pendingId = item.pending_id;

    const title = document.createElement("h3");
    const tx = item.tx;
    title.textContent = tx
      ? `${tx.kind} on ${tx.device_id} by ${tx.issuer}`
      : item.tx_id;
    card.appendChild(title);

    if (tx && Object.keys(tx.params).length) {
      const params = document.createElement("p");
      params.className = "params";
      params.textContent = Object.entries(tx.params)
        .map(([k, v]) => `${k}=${v}`)
        .join(", ");
      card.appendChild(params);
    }

    const reasons = document.createElement("ul");
    reasons.className = "reasons";
    for (const reason of item.reasons) {
      const li = document.createElement("li");
      li.textContent = reason;
      reasons.appendChild(li);
    }
    card.appendChild(reasons);

    const ctx = document.createElement("p");
    ctx.className = "context-summary";
    const bits: string[] = [];
    if (item.context.groups_count !== undefined) {
      bits.push(`${item.context.groups_count} provenance groups`);
    }
    if (item.context.entry_count !== undefined) {
      bits.push(`${item.context.entry_count} entries`);
    }
    if (item.context.snapshot_age_ms !== undefined) {
      bits.push(`snapshot age ${item.context.snapshot_age_ms} ms`);
    }
    for (const reading of item.context.physical ?? []) {
      bits.push(`${reading.quantity} ${reading.value} (${reading.source})`);
    }
    ctx.textContent = bits.join(" | ") || "no context summary";
    card.appendChild(ctx);

    const meta = document.createElement("p");
    meta.className = "meta";
    meta.textContent = `queued at ${new Date(item.enqueued_at).toISOString()}`;
    card.appendChild(meta);

    if (item.state === "awaiting") {
      const busy = this.deciding.has(item.pending_id);
      const actions = document.createElement("div");
      actions.className = "actions";
      for (const decision of ["approve", "revoke"] as const) {
        const button = document.createElement("button");
        button.textContent = busy && this.optimistic.get(item.pending_id) === decision
          ? `${decision}...`
          : decision;
        button.className = `btn-${decision}`;
        button.disabled = busy;
        button.addEventListener("click", () => void this.decide(item.pending_id, decision));
        actions.appendChild(button);
      }
      card.appendChild(actions);
    } else {
      const status = document.createElement("p");
      status.className = "decision";
      status.textContent = item.decision
        ? `${item.decision.decision} by ${item.decision.principal_id}`
        : item.state;
      card.appendChild(status);
    }

    const note = this.notes.get(item.pending_id);
    if (note) {
      const p = document.createElement("p");
      p.className = `note note-${note.kind}`;
      p.textContent = note.text;
      card.appendChild(p);
    }
    return card;
  }
}
