/**
 * Session console: renders one screen per protocol phase and turns every
 * operator action into exactly one session event.
 *
 * The UI never fabricates state. Everything on screen comes from the last
 * server snapshot (GET /state, POST /event responses, WS /feed), the live
 * prediction feed, or the wall-clock capture countdown. While the feed is
 * down a banner is shown and event submission is disabled.
 */

import { ApiClient, FeedSocket, SocketFactory, feedUrl } from "./client.js";
import {
  COLOR_SLOTS,
  ENVELOPE_COUNT,
  FIXTURE_COUNT,
  LAYOUT_COUNT,
  PALETTE_COUNT,
  PALETTE_HEX,
  DesignField,
  describeDesign,
  optionLabels,
  withField,
} from "./catalog.js";
import {
  MetricsReport,
  PredictionMessage,
  SessionEvent,
  SessionSnapshot,
  agreeResponse,
  designChanged,
  designFinalized,
  eegCaptured,
  parseFeed,
  samProbeResponse,
  samSubmitted,
  startSession,
  stimulusShown,
} from "./protocol.js";
import { DotSmoother, QUADRANT_WORDS, quadrantOf, toCanvas } from "./quadrant.js";

export const CAPTURE_SECONDS = 10;
const QUADRANT_SIZE = 260;

function esc(text: string): string {
  return text.replace(/[&<>"']/g, (c) => ({
    "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;",
  })[c] as string);
}

function samSliders(prefix: string, arousal: number, valence: number): string {
  const slider = (axis: string, value: number) => `
    <label class="sam-row">
      <span class="sam-axis">${axis}</span>
      <input type="range" id="${prefix}-${axis}" min="1" max="5" step="1" value="${value}">
      <output id="${prefix}-${axis}-value">${value}</output>
    </label>`;
  return `<div class="sam">${slider("arousal", arousal)}${slider("valence", valence)}</div>`;
}

function designSelect(id: string, label: string, options: string[], selected: number,
  swatches = false): string {
  const opts = options.map((text, i) =>
    `<option value="${i}"${i === selected ? " selected" : ""}>${esc(text)}</option>`,
  ).join("");
  const swatch = swatches
    ? `<span class="swatch" style="background:${PALETTE_HEX[selected]}"></span>` : "";
  return `
    <label class="design-row">
      <span>${esc(label)}</span>
      <select id="${id}">${opts}</select>${swatch}
    </label>`;
}

interface AppOptions {
  captureSeconds?: number;
  now?: () => number; // wall clock in ms, injectable for tests
}

export class ConsoleApp {
  snapshot: SessionSnapshot | null = null;
  connected = false;
  lastPrediction: PredictionMessage | null = null;
  smoother = new DotSmoother();
  metrics: MetricsReport | null = null;
  lastError: string | null = null;

  private captureSeconds: number;
  private now: () => number;
  private captureReadyAt: number | null = null;
  private countdownTimer: ReturnType<typeof setInterval> | null = null;
  private busy = false;

  constructor(
    private root: HTMLElement,
    private client: ApiClient,
    opts: AppOptions = {},
  ) {
    this.captureSeconds = opts.captureSeconds ?? CAPTURE_SECONDS;
    this.now = opts.now ?? (() => Date.now());
  }

  async start(): Promise<void> {
    this.applySnapshot(await this.client.state());
  }

  setConnected(connected: boolean): void {
    this.connected = connected;
    this.render();
  }

  handleFeed(raw: string): void {
    const msg = parseFeed(raw);
    if (msg === null) return;
    if ("kind" in msg) {
      this.applySnapshot(msg.state);
      return;
    }
    this.lastPrediction = msg;
    this.smoother.push(msg.t, msg.arousal, msg.valence);
    this.render();
  }

  applySnapshot(state: SessionSnapshot): void {
    const prev = this.snapshot;
    this.snapshot = state;
    if (state.phase === "Training" && state.training_stage === "await_capture") {
      const entered = prev === null || prev.training_stage !== "await_capture"
        || prev.stimulus_index !== state.stimulus_index;
      if (entered) this.startCountdown();
    } else {
      this.stopCountdown();
    }
    if (state.phase === "Done" && this.metrics === null) {
      void this.loadMetrics();
    }
    this.render();
  }

  private startCountdown(): void {
    this.captureReadyAt = this.now() + this.captureSeconds * 1000;
    if (this.countdownTimer === null) {
      this.countdownTimer = setInterval(() => {
        if (this.captureRemaining() <= 0) this.stopCountdown();
        this.render();
      }, 250);
    }
  }

  private stopCountdown(): void {
    if (this.countdownTimer !== null) {
      clearInterval(this.countdownTimer);
      this.countdownTimer = null;
    }
  }

  private captureRemaining(): number {
    if (this.captureReadyAt === null) return 0;
    return Math.max(0, (this.captureReadyAt - this.now()) / 1000);
  }

  private async loadMetrics(): Promise<void> {
    try {
      this.metrics = await this.client.metrics();
    } catch (err) {
      this.lastError = `metrics unavailable: ${String(err)}`;
    }
    this.render();
  }

  /** Single path for every click; the response snapshot drives the UI. */
  async submit(event: SessionEvent): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.render();
    try {
      const result = await this.client.submit(event);
      if (result.ok && result.state !== null) {
        this.lastError = null;
        this.busy = false;
        this.applySnapshot(result.state);
        return;
      }
      this.lastError = result.error ?? "event rejected";
    } catch (err) {
      this.lastError = `submit failed: ${String(err)}`;
    }
    this.busy = false;
    this.render();
  }

  // ---------------------------------------------------------- rendering

  render(): void {
    const s = this.snapshot;
    const banner = this.connected ? "" : `
      <div id="banner" class="banner">
        feed disconnected: controls are locked until the session server is back
      </div>`;
    const error = this.lastError === null ? "" : `
      <div id="error" class="error">${esc(this.lastError)}</div>`;
    const body = s === null ? `<p class="dim">loading session state…</p>` : this.screen(s);
    this.root.innerHTML = `
      ${banner}${error}
      <header class="top">
        <h1>affectloop console</h1>
        <span id="phase-badge" class="badge">${s === null ? "connecting" : esc(s.phase)}</span>
        <span id="conn-badge" class="badge ${this.connected ? "ok" : "down"}">
          ${this.connected ? "live" : "offline"}
        </span>
        <span class="badge dim">${s === null ? "" : `${s.n_records} records`}</span>
      </header>
      <main>${body}</main>`;
    if (!this.connected || this.busy) {
      for (const node of this.root.querySelectorAll("button, input, select")) {
        (node as HTMLButtonElement).disabled = true;
      }
    }
    this.wire();
  }

  private screen(s: SessionSnapshot): string {
    switch (s.phase) {
      case "Idle":
        return `
          <section class="card">
            <p>EEG stream connected? Fit the cap, then begin the protocol.</p>
            <button id="start">Start session</button>
          </section>`;
      case "Training":
        return this.trainingScreen(s);
      case "Fitting":
        return `
          <section class="card">
            <p>Fitting affect models on ${s.n_records} training trials…</p>
            <p class="dim">validation probes start automatically when done</p>
          </section>`;
      case "Validation":
        return this.validationScreen(s);
      case "FreeDesign":
        return this.freeDesignScreen(s);
      case "Done":
        return this.doneScreen();
    }
  }

  private trainingScreen(s: SessionSnapshot): string {
    const head = `
      <h2>Training · stimulus ${s.stimulus_index} of ${s.totals.training}</h2>
      <p id="stimulus-label">${esc(s.stimulus?.label ?? "")}
        <span class="dim">${esc(s.stimulus?.description ?? "")}</span></p>`;
    if (s.training_stage === "await_stimulus") {
      return `
        <section class="card">${head}
          <button id="show-stimulus">Show stimulus</button>
        </section>`;
    }
    if (s.training_stage === "await_capture") {
      const remaining = this.captureRemaining();
      return `
        <section class="card">${head}
          <p>Capturing EEG… <span id="countdown">${remaining.toFixed(0)}</span> s left</p>
          <button id="capture-done"${remaining > 0 ? " disabled" : ""}>
            Capture complete</button>
        </section>`;
    }
    return `
      <section class="card">${head}
        <p>How did the stimulus make you feel?</p>
        ${samSliders("sam", 3, 3)}
        <button id="sam-submit">Submit SAM rating</button>
      </section>`;
  }

  private designPanel(s: SessionSnapshot): string {
    const d = s.design;
    const colorRows = COLOR_SLOTS.map((slot, i) =>
      designSelect(`design-color-${i}`, slot, optionLabels("palette", PALETTE_COUNT),
        d.colors[i], true),
    ).join("");
    return `
      <div class="design">
        ${designSelect("design-envelope", "envelope", optionLabels("envelope", ENVELOPE_COUNT), d.envelope)}
        ${designSelect("design-layout", "layout", optionLabels("layout", LAYOUT_COUNT), d.layout)}
        ${designSelect("design-fixture", "fixture", optionLabels("fixture", FIXTURE_COUNT), d.fixture)}
        ${colorRows}
        <p id="design-summary" class="dim">${esc(describeDesign(d))}</p>
      </div>`;
  }

  private validationScreen(s: SessionSnapshot): string {
    const progress = `
      <h2>Validation · agree ${s.agree_done}/${s.totals.probes_per_kind}
        · SAM ${s.sam_done}/${s.totals.probes_per_kind}</h2>`;
    if (s.probe_stage === "await_response") {
      const modal = s.next_probe === "agree" ? `
        <p id="probe-prompt">${esc(s.prompt ?? "")}</p>
        <button id="agree-yes">Yes, that matches</button>
        <button id="agree-no">No, it does not</button>` : `
        <p id="probe-prompt">${esc(s.prompt ?? "")}</p>
        ${samSliders("probe", 3, 3)}
        <button id="probe-submit">Submit rating</button>`;
      return `
        <section class="card">${progress}
          <div id="probe-modal" class="modal">${modal}</div>
        </section>`;
    }
    const status = s.probe_stage === "await_prediction"
      ? `<p id="probe-wait">Design changed; waiting for the classifier…</p>`
      : `<p>Change one design field to run the next ${esc(s.next_probe)} probe.</p>`;
    return `
      <section class="card">${progress}${status}
        ${this.designPanel(s)}
      </section>`;
  }

  private quadrantPanel(): string {
    const size = QUADRANT_SIZE;
    const mid = size / 2;
    const dot = this.smoother.current();
    const trail = this.smoother.trail()
      .map((p) => {
        const { cx, cy } = toCanvas(p.x, p.y, size);
        return `${cx.toFixed(1)},${cy.toFixed(1)}`;
      })
      .join(" ");
    let dotMarkup = "";
    let word = "no prediction yet";
    if (dot !== null) {
      const { cx, cy } = toCanvas(dot.x, dot.y, size);
      dotMarkup = `<circle id="dot" cx="${cx.toFixed(1)}" cy="${cy.toFixed(1)}" r="7"
        data-x="${dot.x.toFixed(4)}" data-y="${dot.y.toFixed(4)}"/>`;
      const q = quadrantOf(dot.x, dot.y);
      word = q === null ? "neutral" : QUADRANT_WORDS[q];
    }
    const raw = this.lastPrediction;
    const debug = raw === null ? "" :
      `raw arousal ${raw.arousal} valence ${raw.valence}`
      + ` · scores a[${raw.arousal_scores.map((v) => v.toFixed(2)).join(", ")}]`
      + ` v[${raw.valence_scores.map((v) => v.toFixed(2)).join(", ")}]`;
    return `
      <div class="quadrant-panel">
        <svg id="quadrant" width="${size}" height="${size}" viewBox="0 0 ${size} ${size}">
          <rect width="${size}" height="${size}" class="qbg"/>
          <line x1="${mid}" y1="0" x2="${mid}" y2="${size}" class="axis"/>
          <line x1="0" y1="${mid}" x2="${size}" y2="${mid}" class="axis"/>
          <text x="${size - 6}" y="14" text-anchor="end" class="qlabel">${QUADRANT_WORDS.Q1}</text>
          <text x="6" y="14" class="qlabel">${QUADRANT_WORDS.Q2}</text>
          <text x="6" y="${size - 8}" class="qlabel">${QUADRANT_WORDS.Q3}</text>
          <text x="${size - 6}" y="${size - 8}" text-anchor="end" class="qlabel">${QUADRANT_WORDS.Q4}</text>
          <polyline id="trail" points="${trail}" class="trail"/>
          ${dotMarkup}
        </svg>
        <p id="quadrant-word">${esc(word)}</p>
        <p id="debug-raw" class="dim">${esc(debug)}</p>
      </div>`;
  }

  private freeDesignScreen(s: SessionSnapshot): string {
    return `
      <section class="card">
        <h2>Free design · ${s.design_index} of ${s.totals.free_designs}</h2>
        <div class="columns">
          ${this.designPanel(s)}
          ${this.quadrantPanel()}
        </div>
        <button id="finalize">Finalize design ${s.design_index}</button>
      </section>`;
  }

  private doneScreen(): string {
    const m = this.metrics;
    if (m === null) {
      return `<section class="card"><h2>Session complete</h2>
        <p class="dim">loading metrics…</p></section>`;
    }
    const pct = (v: number | null) => (v === null ? "n/a" : `${(v * 100).toFixed(0)}%`);
    const confusion = (name: string, rows: number[][] | null) => {
      if (rows === null) return "";
      const header = m.class_order.map((c) => `<th>${esc(c)}</th>`).join("");
      const body = rows.map((row, i) => `
        <tr><th>${esc(m.class_order[i])}</th>${row.map((v) => `<td>${v}</td>`).join("")}</tr>`,
      ).join("");
      return `
        <figure class="confusion">
          <figcaption>${esc(name)} (rows: self-report, columns: predicted)</figcaption>
          <table><tr><th></th>${header}</tr>${body}</table>
        </figure>`;
    };
    return `
      <section class="card" id="metrics">
        <h2>Session complete</h2>
        <p>Agreement rate: <strong id="metric-agreement">${pct(m.agreement_rate)}</strong>
          over ${m.n_agree_trials} probes</p>
        <p>Self-report consistency: arousal
          <strong>${pct(m.self_report_consistency.arousal)}</strong>, valence
          <strong>${pct(m.self_report_consistency.valence)}</strong>
          over ${m.n_sam_trials} probes</p>
        ${confusion("arousal", m.confusion.arousal)}
        ${confusion("valence", m.confusion.valence)}
      </section>`;
  }

  // ------------------------------------------------------------- wiring

  private onClick(id: string, handler: () => void): void {
    const node = this.root.querySelector<HTMLButtonElement>(`#${id}`);
    node?.addEventListener("click", handler);
  }

  private sliderValue(id: string): number {
    const node = this.root.querySelector<HTMLInputElement>(`#${id}`);
    return node === null ? 3 : Number(node.value);
  }

  private wireSliders(prefix: string): void {
    for (const axis of ["arousal", "valence"]) {
      const input = this.root.querySelector<HTMLInputElement>(`#${prefix}-${axis}`);
      const out = this.root.querySelector<HTMLOutputElement>(`#${prefix}-${axis}-value`);
      input?.addEventListener("input", () => {
        if (out !== null) out.value = input.value;
      });
    }
  }

  private wireDesignPanel(s: SessionSnapshot): void {
    const fields: [string, DesignField][] = [
      ["design-envelope", "envelope"],
      ["design-layout", "layout"],
      ["design-fixture", "fixture"],
      ["design-color-0", 0],
      ["design-color-1", 1],
      ["design-color-2", 2],
    ];
    for (const [id, field] of fields) {
      const select = this.root.querySelector<HTMLSelectElement>(`#${id}`);
      select?.addEventListener("change", () => {
        void this.submit(designChanged(withField(s.design, field, Number(select.value))));
      });
    }
  }

  private wire(): void {
    const s = this.snapshot;
    if (s === null) return;
    this.onClick("start", () => void this.submit(startSession()));
    this.onClick("show-stimulus", () =>
      void this.submit(stimulusShown(s.stimulus_index)));
    this.onClick("capture-done", () => {
      if (s.stimulus_t === null) return;
      void this.submit(eegCaptured(s.stimulus_index, s.stimulus_t, this.captureSeconds));
    });
    this.onClick("sam-submit", () => void this.submit(samSubmitted({
      arousal: this.sliderValue("sam-arousal"),
      valence: this.sliderValue("sam-valence"),
    })));
    this.onClick("agree-yes", () => void this.submit(agreeResponse(true)));
    this.onClick("agree-no", () => void this.submit(agreeResponse(false)));
    this.onClick("probe-submit", () => void this.submit(samProbeResponse({
      arousal: this.sliderValue("probe-arousal"),
      valence: this.sliderValue("probe-valence"),
    })));
    this.onClick("finalize", () => void this.submit(designFinalized()));
    this.wireSliders("sam");
    this.wireSliders("probe");
    if (s.phase === "Validation" || s.phase === "FreeDesign") {
      this.wireDesignPanel(s);
    }
  }
}

export function bootstrap(factory?: SocketFactory): ConsoleApp {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app mount point");
  const app = new ConsoleApp(root, new ApiClient());
  const feed = new FeedSocket(feedUrl(window.location), {
    onMessage: (raw) => app.handleFeed(raw),
    onStatus: (connected) => app.setConnected(connected),
  }, factory);
  feed.connect();
  void app.start();
  return app;
}

// Browser entry point; tests import the classes instead.
if (typeof window !== "undefined" && typeof document !== "undefined"
  && document.getElementById("app") !== null) {
  window.addEventListener("load", () => {
    bootstrap();
  });
}
