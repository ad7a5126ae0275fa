import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError } from "../src/api.js";
import { InboxController, type DecisionClient } from "../src/inbox.js";
import type { DecisionResult, PendingItem } from "../src/types.js";

function pendingItem(overrides: Partial<PendingItem> = {}): PendingItem {
  return {
    pending_id: "p1",
    tx_id: "cfg-1",
    reasons: ["unseen-template"],
    context: { groups_count: 2, entry_count: 20, snapshot_age_ms: 12 },
    enqueued_at: 1000,
    state: "awaiting",
    decision: null,
    tx: {
      device_id: "sensor-1",
      kind: "ConfigUpdate",
      params: { unit: "fahrenheit" },
      issuer: "alice",
      status: "Suspicious",
    },
    ...overrides,
  };
}

function decisionResult(decision: "Approve" | "Revoke"): DecisionResult {
  return {
    ...pendingItem({ state: "decided" }),
    decision: { principal_id: "alice", decision, decided_at: 2000 },
    tx_status: decision === "Approve" ? "Executed" : "Rejected",
  };
}

describe("InboxController", () => {
  let root: HTMLElement;
  let onAuthRequired: () => void;
  let requestRefresh: () => void;

  beforeEach(() => {
    document.body.innerHTML = '<div id="inbox"></div>';
    root = document.getElementById("inbox")!;
    onAuthRequired = vi.fn();
    requestRefresh = vi.fn();
  });

  function controller(client: DecisionClient): InboxController {
    return new InboxController(root, client, onAuthRequired, requestRefresh);
  }

  it("renders an empty state when nothing is queued", () => {
    controller({ decide: vi.fn() }).update([]);
    expect(root.querySelector(".empty-state")?.textContent).toContain("No transactions");
  });

  it("renders cards newest-first with reasons and context summary", () => {
    const inbox = controller({ decide: vi.fn() });
    inbox.update([
      pendingItem({ pending_id: "old", tx_id: "t-old", enqueued_at: 1 }),
      pendingItem({ pending_id: "new", tx_id: "t-new", enqueued_at: 99 }),
    ]);
    const cards = [...root.querySelectorAll(".pending-card")];
    expect(cards.map((c) => (c as HTMLElement).dataset.pendingId)).toEqual(["new", "old"]);
    expect(cards[0].querySelector(".reasons")!.textContent).toContain("unseen-template");
    expect(cards[0].querySelector(".context-summary")!.textContent).toContain(
      "2 provenance groups",
    );
    expect(inbox.awaitingCount()).toBe(2);
  });

  it("approve click decides optimistically and shows the outcome", async () => {
    const decide = vi.fn(async () => decisionResult("Approve"));
    const inbox = controller({ decide });
    inbox.update([pendingItem()]);
    (root.querySelector(".btn-approve") as HTMLButtonElement).click();
    await vi.waitFor(() => {
      expect(root.querySelector(".note-info")?.textContent).toContain("Executed");
    });
    expect(decide).toHaveBeenCalledWith("p1", "approve");
    expect(root.querySelector(".pending-card")!.className).toContain("state-decided");
  });

  it("revoke click explains the provenance feedback", async () => {
    const decide = vi.fn(async () => decisionResult("Revoke"));
    const inbox = controller({ decide });
    inbox.update([pendingItem()]);
    (root.querySelector(".btn-revoke") as HTMLButtonElement).click();
    await vi.waitFor(() => {
      expect(root.querySelector(".note-info")?.textContent).toContain(
        "enter provenance as Rejected",
      );
    });
  });

  it("rolls back on 409 and asks for a refresh", async () => {
    const decide = vi.fn(async () => {
      throw new ApiError(409, "ALREADY_DECIDED", "p1");
    });
    const inbox = controller({ decide });
    inbox.update([pendingItem()]);
    (root.querySelector(".btn-approve") as HTMLButtonElement).click();
    await vi.waitFor(() => {
      expect(root.querySelector(".note-info")?.textContent).toContain("decided elsewhere");
    });
    expect(requestRefresh).toHaveBeenCalled();
    // The card stays awaiting until the poll says otherwise.
    expect(root.querySelector(".pending-card")!.className).toContain("state-awaiting");
  });

  it("shows an authorization note on 403", async () => {
    const decide = vi.fn(async () => {
      throw new ApiError(403, "FORBIDDEN", "nope");
    });
    const inbox = controller({ decide });
    inbox.update([pendingItem()]);
    (root.querySelector(".btn-revoke") as HTMLButtonElement).click();
    await vi.waitFor(() => {
      expect(root.querySelector(".note-error")?.textContent).toContain("Not authorized");
    });
  });

  it("escalates 401 to the auth handler", async () => {
    const decide = vi.fn(async () => {
      throw new ApiError(401, "UNAUTHORIZED", "bad token");
    });
    const inbox = controller({ decide });
    inbox.update([pendingItem()]);
    (root.querySelector(".btn-approve") as HTMLButtonElement).click();
    await vi.waitFor(() => {
      expect(onAuthRequired).toHaveBeenCalled();
    });
  });

  it("never decides without a click", () => {
    const decide = vi.fn();
    const inbox = controller({ decide });
    inbox.update([pendingItem(), pendingItem({ pending_id: "p2" })]);
    inbox.update([pendingItem(), pendingItem({ pending_id: "p2" })]);
    expect(decide).not.toHaveBeenCalled();
  });

  it("reflects server state after a poll marks an item decided", () => {
    const inbox = controller({ decide: vi.fn() });
    inbox.update([pendingItem()]);
    inbox.update([
      pendingItem({
        state: "decided",
        decision: { principal_id: "bob", decision: "Revoke", decided_at: 5 },
      }),
    ]);
    expect(root.querySelector(".decision")?.textContent).toContain("Revoke by bob");
    expect(inbox.awaitingCount()).toBe(0);
  });
});
