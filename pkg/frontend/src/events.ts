// Event subscription with automatic resubscribe. The feed is a wake-up
// signal only; renders always pull authoritative state from the server.

import type { SessionEvent } from "./types.js";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;
export type ConnectionStatus = "connected" | "disconnected";

const MAX_BACKOFF_MS = 15_000;

export class EventFeed {
  private socket: WebSocketLike | null = null;
  private attempts = 0;
  private stopped = false;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly url: string,
    private readonly makeSocket: WebSocketFactory,
    private readonly onEvent: (event: SessionEvent) => void,
    private readonly onStatus: (status: ConnectionStatus) => void,
    private readonly baseBackoffMs = 500,
  ) {}

  start(): void {
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.socket?.close();
    this.socket = null;
  }

  private connect(): void {
    if (this.stopped) {
      return;
    }
    const socket = this.makeSocket(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.onStatus("connected");
    };
    socket.onmessage = (ev) => {
      try {
        this.onEvent(JSON.parse(String(ev.data)) as SessionEvent);
      } catch {
        /* ignore undecodable frames */
      }
    };
    socket.onerror = () => {
      /* onclose follows and drives the resubscribe */
    };
    socket.onclose = () => {
      if (this.stopped) {
        return;
      }
      this.onStatus("disconnected");
      const backoff = Math.min(this.baseBackoffMs * 2 ** this.attempts, MAX_BACKOFF_MS);
      this.attempts += 1;
      this.timer = setTimeout(() => this.connect(), backoff);
    };
  }
}
