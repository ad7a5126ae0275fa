/** Decision history and pipeline counters. The two panes fail
 * independently: a metrics outage never blanks the history, and neither
 * touches the inbox. */

import type { MetricsView, TxRow } from "./types.js";

/** The server reads this view needs; satisfied by GatewayClient. */
export interface HistoryClient {
  transactions(params?: Record<string, string>): Promise<TxRow[]>;
  metrics(): Promise<MetricsView>;
}

export class HistoryController {
  constructor(
    private historyRoot: HTMLElement,
    private metricsRoot: HTMLElement,
    private client: HistoryClient,
  ) {}

  async refresh(): Promise<void> {
    await Promise.all([this.refreshHistory(), this.refreshMetrics()]);
  }

  private async refreshHistory(): Promise<void> {
    try {
      const [executed, rejected] = await Promise.all([
        this.client.transactions({ status: "Executed" }),
        this.client.transactions({ status: "Rejected" }),
      ]);
      const rows = [...executed, ...rejected].sort(
        (a, b) => b.submitted_at - a.submitted_at,
      );
      this.historyRoot.textContent = "";
      if (rows.length === 0) {
        const empty = document.createElement("p");
        empty.className = "empty-state";
        empty.textContent = "No decided transactions yet.";
        this.historyRoot.appendChild(empty);
        return;
      }
      const list = document.createElement("ul");
      list.className = "history-list";
      for (const row of rows.slice(0, 50)) {
        const li = document.createElement("li");
        li.textContent = `${row.status}: ${row.kind} on ${row.device_id} (${row.tx_id})`;
        list.appendChild(li);
      }
      this.historyRoot.appendChild(list);
    } catch {
      this.historyRoot.textContent = "History unavailable.";
    }
  }

  private async refreshMetrics(): Promise<void> {
    try {
      const metrics = await this.client.metrics();
      this.metricsRoot.textContent = "";
      const list = document.createElement("ul");
      list.className = "counters";
      for (const status of ["Executed", "Suspicious", "Rejected", "Expired", "Approved", "Mined"]) {
        const count = metrics.counts[status];
        if (count === undefined) continue;
        const li = document.createElement("li");
        li.textContent = `${status}: ${count}`;
        list.appendChild(li);
      }
      this.metricsRoot.appendChild(list);
    } catch {
      this.metricsRoot.textContent = "Metrics unavailable.";
    }
  }
}
