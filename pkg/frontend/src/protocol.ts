/**
 * Wire types and event builders for the session HTTP+JSON API.
 *
 * The server accepts eight event kinds on POST /event; fitting and
 * prediction events are engine-internal and must never be sent from here.
 * Builders return plain objects whose JSON.stringify form is the exact
 * request body, so tests can pin bytes.
 */

export type AffectCode = -1 | 0 | 1;

export interface SamRating {
  arousal: number; // 1..5
  valence: number; // 1..5
}

export interface Design {
  envelope: number;
  layout: number;
  fixture: number;
  colors: [number, number, number];
}

export interface StimulusInfo {
  label: string;
  description: string;
}

export interface SessionSnapshot {
  phase: "Idle" | "Training" | "Fitting" | "Validation" | "FreeDesign" | "Done";
  stimulus_index: number;
  training_stage: "" | "await_stimulus" | "await_capture" | "await_sam";
  stimulus_t: number | null;
  stimulus: StimulusInfo | null;
  next_probe: "" | "agree" | "sam";
  probe_stage: "" | "await_change" | "await_prediction" | "await_response";
  agree_done: number;
  sam_done: number;
  design_index: number;
  design: Design;
  n_records: number;
  prompt: string | null;
  totals: { training: number; probes_per_kind: number; free_designs: number };
}

export interface StateMessage {
  kind: "state";
  state: SessionSnapshot;
}

export interface PredictionMessage {
  v: number;
  t: number;
  arousal: AffectCode;
  valence: AffectCode;
  arousal_scores: number[];
  valence_scores: number[];
  session_phase: string;
}

export interface MetricsReport {
  agreement_rate: number | null;
  self_report_consistency: { arousal: number | null; valence: number | null };
  confusion: { arousal: number[][] | null; valence: number[][] | null };
  n_agree_trials: number;
  n_sam_trials: number;
  class_order: string[];
}

export type SessionEvent =
  | { kind: "StartSession" }
  | { kind: "StimulusShown"; stimulus_id: number }
  | { kind: "EegCaptured"; stimulus_id: number; start: number; duration: number }
  | { kind: "SamSubmitted"; rating: SamRating }
  | { kind: "DesignChanged"; design: Design }
  | { kind: "AgreeResponse"; agree: boolean }
  | { kind: "SamProbeResponse"; rating: SamRating }
  | { kind: "DesignFinalized" };

function checkSam(rating: SamRating): SamRating {
  for (const axis of ["arousal", "valence"] as const) {
    const v = rating[axis];
    if (!Number.isInteger(v) || v < 1 || v > 5) {
      throw new Error(`SAM ${axis} must be an integer 1-5, got ${v}`);
    }
  }
  return { arousal: rating.arousal, valence: rating.valence };
}

export function startSession(): SessionEvent {
  return { kind: "StartSession" };
}

export function stimulusShown(stimulusId: number): SessionEvent {
  return { kind: "StimulusShown", stimulus_id: stimulusId };
}

export function eegCaptured(stimulusId: number, start: number, duration: number): SessionEvent {
  return { kind: "EegCaptured", stimulus_id: stimulusId, start, duration };
}

export function samSubmitted(rating: SamRating): SessionEvent {
  return { kind: "SamSubmitted", rating: checkSam(rating) };
}

export function designChanged(design: Design): SessionEvent {
  return {
    kind: "DesignChanged",
    design: {
      envelope: design.envelope,
      layout: design.layout,
      fixture: design.fixture,
      colors: [design.colors[0], design.colors[1], design.colors[2]],
    },
  };
}

export function agreeResponse(agree: boolean): SessionEvent {
  return { kind: "AgreeResponse", agree };
}

export function samProbeResponse(rating: SamRating): SessionEvent {
  return { kind: "SamProbeResponse", rating: checkSam(rating) };
}

export function designFinalized(): SessionEvent {
  return { kind: "DesignFinalized" };
}

/** Exact request body for POST /event. */
export function eventBody(event: SessionEvent): string {
  return JSON.stringify(event);
}

/** Inverse of the SAM builders; round-trips slider values through the wire form. */
export function samRatingFrom(doc: unknown): SamRating {
  const rating = (doc as { rating?: unknown }).rating;
  if (typeof rating !== "object" || rating === null) {
    throw new Error("event carries no rating object");
  }
  return checkSam(rating as SamRating);
}

function isAffectCode(v: unknown): v is AffectCode {
  return v === -1 || v === 0 || v === 1;
}

/**
 * Classify one /feed payload. State snapshots carry kind:"state";
 * prediction messages carry the versioned classifier fields. Anything
 * else returns null so a newer server cannot break the console.
 */
export function parseFeed(raw: string): StateMessage | PredictionMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Record<string, unknown>;
  if (msg.kind === "state" && typeof msg.state === "object" && msg.state !== null) {
    return { kind: "state", state: msg.state as SessionSnapshot };
  }
  if (msg.v === 1 && isAffectCode(msg.arousal) && isAffectCode(msg.valence)
    && typeof msg.t === "number") {
    return msg as unknown as PredictionMessage;
  }
  return null;
}
