import { describe, expect, it, vi } from "vitest";

import { ApiError, ConnectionError, GatewayClient } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("GatewayClient", () => {
  it("sends the bearer token and parses pending items", async () => {
    const fetchMock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("http://gw/pending");
      expect((init?.headers as Record<string, string>)["Authorization"]).toBe("Bearer tok");
      return jsonResponse(200, { pending: [{ pending_id: "p1", reasons: ["unseen-template"] }] });
    });
    const client = new GatewayClient("http://gw", "tok", fetchMock as typeof fetch);
    const pending = await client.listPending();
    expect(pending).toHaveLength(1);
    expect(pending[0].pending_id).toBe("p1");
  });

  it("maps gateway error envelopes to ApiError with the machine code", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse(409, { error: { code: "ALREADY_DECIDED", message: "p1" } }),
    );
    const client = new GatewayClient("http://gw", "tok", fetchMock as typeof fetch);
    const err = await client.decide("p1", "approve").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.code).toBe("ALREADY_DECIDED");
  });

  it("maps 401 responses so callers can re-prompt for a token", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse(401, { error: { code: "UNAUTHORIZED", message: "no" } }),
    );
    const client = new GatewayClient("http://gw", null, fetchMock as typeof fetch);
    const err = await client.listPending().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(401);
  });

  it("wraps transport failures in ConnectionError", async () => {
    const fetchMock = vi.fn(async () => {
      throw new TypeError("fetch failed");
    });
    const client = new GatewayClient("http://gw", "tok", fetchMock as typeof fetch);
    const err = await client.listPending().catch((e) => e);
    expect(err).toBeInstanceOf(ConnectionError);
  });

  it("builds transaction queries from params", async () => {
    const fetchMock = vi.fn(async (url: RequestInfo | URL) => {
      expect(String(url)).toBe("http://gw/transactions?status=Executed");
      return jsonResponse(200, { transactions: [] });
    });
    const client = new GatewayClient("http://gw", "tok", fetchMock as typeof fetch);
    expect(await client.transactions({ status: "Executed" })).toEqual([]);
  });
});
