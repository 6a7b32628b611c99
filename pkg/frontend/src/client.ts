/**
 * Transport layer: JSON calls to the session API and the /feed WebSocket.
 *
 * Both take their I/O primitive as a constructor argument so contract
 * tests can run against a mocked server without a network stack.
 */

import type {
  MetricsReport,
  SessionEvent,
  SessionSnapshot,
  StateMessage,
} from "./protocol.js";
import { eventBody } from "./protocol.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface SubmitResult {
  ok: boolean;
  status: number;
  state: SessionSnapshot | null;
  error: string | null;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async state(): Promise<SessionSnapshot> {
    const resp = await this.fetchFn(`${this.base}/state`);
    if (!resp.ok) throw new Error(`GET /state failed: ${resp.status}`);
    const doc = (await resp.json()) as StateMessage;
    return doc.state;
  }

  /** POST one event; 409/422 come back as a result, not an exception. */
  async submit(event: SessionEvent): Promise<SubmitResult> {
    const resp = await this.fetchFn(`${this.base}/event`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: eventBody(event),
    });
    const doc = (await resp.json()) as { state?: SessionSnapshot; error?: string };
    if (!resp.ok) {
      return { ok: false, status: resp.status, state: null, error: doc.error ?? "rejected" };
    }
    return { ok: true, status: resp.status, state: doc.state ?? null, error: null };
  }

  async metrics(): Promise<MetricsReport> {
    const resp = await this.fetchFn(`${this.base}/metrics`);
    if (!resp.ok) throw new Error(`GET /metrics failed: ${resp.status}`);
    return (await resp.json()) as MetricsReport;
  }
}

/** The subset of WebSocket the feed needs; lets tests substitute a fake. */
export type FeedEventType = "open" | "close" | "error" | "message";

export interface SocketLike {
  addEventListener(type: FeedEventType, cb: (ev: { data?: unknown }) => void): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface FeedHandlers {
  onMessage: (raw: string) => void;
  onStatus: (connected: boolean) => void;
}

const RECONNECT_MIN_MS = 500;
const RECONNECT_MAX_MS = 8000;

/**
 * Single consumer of WS /feed with exponential-backoff reconnect.
 * Every payload is forwarded verbatim; connection state changes go to
 * onStatus so the UI can raise its disconnect banner.
 */
export class FeedSocket {
  private socket: SocketLike | null = null;
  private delay = RECONNECT_MIN_MS;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(
    private url: string,
    private handlers: FeedHandlers,
    private factory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
  ) {}

  connect(): void {
    this.stopped = false;
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.addEventListener("open", () => {
      this.delay = RECONNECT_MIN_MS;
      this.handlers.onStatus(true);
    });
    socket.addEventListener("message", (ev) => {
      this.handlers.onMessage(String(ev.data));
    });
    socket.addEventListener("close", () => this.handleDown());
    socket.addEventListener("error", () => this.handleDown());
  }

  private handleDown(): void {
    this.handlers.onStatus(false);
    this.socket = null;
    if (this.stopped || this.timer !== null) return;
    this.timer = setTimeout(() => {
      this.timer = null;
      if (!this.stopped) this.connect();
    }, this.delay);
    this.delay = Math.min(this.delay * 2, RECONNECT_MAX_MS);
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
}

/** ws:// or wss:// URL for /feed next to the page origin. */
export function feedUrl(location: { protocol: string; host: string }): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/feed`;
}
