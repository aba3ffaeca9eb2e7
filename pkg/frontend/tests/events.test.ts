import { describe, expect, it, vi } from "vitest";

import { EventFeed, type WebSocketLike } from "../src/events.js";

class FakeSocket implements WebSocketLike {
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  closed = false;

  close(): void {
    this.closed = true;
  }
}

describe("EventFeed", () => {
  it("reports connection status and delivers parsed events", () => {
    const sockets: FakeSocket[] = [];
    const events: unknown[] = [];
    const statuses: string[] = [];
    const feed = new EventFeed(
      "ws://svc/sessions/s1/events",
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      (e) => events.push(e),
      (s) => statuses.push(s),
    );
    feed.start();
    sockets[0].onopen?.();
    sockets[0].onmessage?.({ data: JSON.stringify({ type: "candidates_ready", round: 1 }) });
    expect(statuses).toEqual(["connected"]);
    expect(events).toEqual([{ type: "candidates_ready", round: 1 }]);
    feed.stop();
    expect(sockets[0].closed).toBe(true);
  });

  it("resubscribes with backoff after a drop", () => {
    vi.useFakeTimers();
    try {
      const sockets: FakeSocket[] = [];
      const statuses: string[] = [];
      const feed = new EventFeed(
        "ws://svc/sessions/s1/events",
        () => {
          const s = new FakeSocket();
          sockets.push(s);
          return s;
        },
        () => {},
        (s) => statuses.push(s),
        100,
      );
      feed.start();
      sockets[0].onopen?.();
      sockets[0].onclose?.();
      expect(statuses).toEqual(["connected", "disconnected"]);
      expect(sockets).toHaveLength(1);
      vi.advanceTimersByTime(101);
      expect(sockets).toHaveLength(2);
      sockets[1].onopen?.();
      expect(statuses).toEqual(["connected", "disconnected", "connected"]);
      // a second drop backs off twice as long
      sockets[1].onclose?.();
      vi.advanceTimersByTime(101);
      expect(sockets).toHaveLength(3);
      feed.stop();
    } finally {
      vi.useRealTimers();
    }
  });

  it("stays quiet after stop()", () => {
    vi.useFakeTimers();
    try {
      const sockets: FakeSocket[] = [];
      const feed = new EventFeed(
        "ws://svc/x",
        () => {
          const s = new FakeSocket();
          sockets.push(s);
          return s;
        },
        () => {},
        () => {},
        100,
      );
      feed.start();
      feed.stop();
      sockets[0].onclose?.();
      vi.advanceTimersByTime(10_000);
      expect(sockets).toHaveLength(1);
    } finally {
      vi.useRealTimers();
    }
  });

  it("ignores frames that fail to parse", () => {
    const sockets: FakeSocket[] = [];
    const events: unknown[] = [];
    const feed = new EventFeed(
      "ws://svc/x",
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      (e) => events.push(e),
      () => {},
    );
    feed.start();
    sockets[0].onmessage?.({ data: "{nope" });
    sockets[0].onmessage?.({ data: JSON.stringify({ type: "finalized" }) });
    expect(events).toEqual([{ type: "finalized" }]);
    feed.stop();
  });
});
