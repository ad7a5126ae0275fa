/** Console bootstrap: session-scoped token prompt, 2 s polling of the
 * pending queue, history and metrics panes, connection-lost banner. */

import { ApiError, ConnectionError, GatewayClient } from "./api.js";
import { HistoryController } from "./history.js";
import { InboxController } from "./inbox.js";
import { Poller } from "./poller.js";

const TOKEN_KEY = "provgate_token";

function gatewayBaseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("gateway");
  if (fromQuery) return fromQuery.replace(/\/$/, "");
  return window.location.origin;
}

function pollIntervalMs(): number {
  const raw = new URLSearchParams(window.location.search).get("interval");
  const parsed = raw ? Number.parseInt(raw, 10) : NaN;
  return Number.isFinite(parsed) && parsed >= 250 ? parsed : 2000;
}

export function startConsole(doc: Document): void {
  const inboxRoot = doc.getElementById("inbox")!;
  const historyRoot = doc.getElementById("history")!;
  const metricsRoot = doc.getElementById("metrics")!;
  const banner = doc.getElementById("banner")!;
  const tokenForm = doc.getElementById("token-form") as HTMLFormElement;
  const tokenInput = doc.getElementById("token-input") as HTMLInputElement;
  const tokenPane = doc.getElementById("token-pane")!;
  const mainPane = doc.getElementById("main-pane")!;

  const client = new GatewayClient(gatewayBaseUrl(), null);
  let poller: Poller | null = null;

  const requireToken = (message: string) => {
    poller?.stop();
    sessionStorage.removeItem(TOKEN_KEY);
    client.setToken(null);
    tokenPane.classList.remove("hidden");
    mainPane.classList.add("hidden");
    (doc.getElementById("token-message") as HTMLElement).textContent = message;
  };

  const inbox = new InboxController(
    inboxRoot as HTMLElement,
    client,
    () => requireToken("Session rejected; enter a valid verifier token."),
    () => void poller?.runOnce(),
  );
  const history = new HistoryController(
    historyRoot as HTMLElement,
    metricsRoot as HTMLElement,
    client,
  );

  const tick = async () => {
    try {
      const items = await client.listPending();
      banner.classList.add("hidden");
      inbox.update(items);
      await history.refresh();
    } catch (err) {
      if (err instanceof ConnectionError) {
        banner.textContent = "Connection to the gateway lost; retrying.";
        banner.classList.remove("hidden");
        return;
      }
      if (err instanceof ApiError && err.status === 401) {
        requireToken("Token rejected by the gateway; enter a valid one.");
        return;
      }
      banner.textContent = `Poll failed: ${String(err)}`;
      banner.classList.remove("hidden");
    }
  };

  const begin = (token: string) => {
    client.setToken(token);
    sessionStorage.setItem(TOKEN_KEY, token);
    tokenPane.classList.add("hidden");
    mainPane.classList.remove("hidden");
    poller?.stop();
    poller = new Poller(pollIntervalMs(), tick);
    poller.start();
  };

  tokenForm.addEventListener("submit", (event) => {
    event.preventDefault();
    const value = tokenInput.value.trim();
    if (value) begin(value);
  });

  const saved = sessionStorage.getItem(TOKEN_KEY);
  if (saved) {
    begin(saved);
  } else {
    requireToken("Enter your verifier token to review held transactions.");
  }
}

if (typeof document !== "undefined" && document.getElementById("inbox")) {
  startConsole(document);
}
