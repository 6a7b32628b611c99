/**
 * Valence-arousal coordinate display logic.
 *
 * The dot lives in the unit square: x is the valence code, y the arousal
 * code, both in [-1, +1]. Quadrant labels are fixed by the coordinate
 * semantics: Q1 joyful/excited, Q2 fearful/enraged, Q3 boring/sad,
 * Q4 relaxed/calm. Class codes on an axis belong to no quadrant.
 */

import type { AffectCode } from "./protocol.js";

export type QuadrantId = "Q1" | "Q2" | "Q3" | "Q4";

export const QUADRANT_WORDS: Record<QuadrantId, string> = {
  Q1: "joyful / excited",
  Q2: "fearful / enraged",
  Q3: "boring / sad",
  Q4: "relaxed / calm",
};

export interface DotPoint {
  x: number; // valence, [-1, 1]
  y: number; // arousal, [-1, 1]
  t: number; // stream time of the prediction, seconds
}

export function quadrantOf(x: number, y: number): QuadrantId | null {
  if (x > 0 && y > 0) return "Q1";
  if (x < 0 && y > 0) return "Q2";
  if (x < 0 && y < 0) return "Q3";
  if (x > 0 && y < 0) return "Q4";
  return null;
}

/** Pixel position inside a size-by-size square; +y (high arousal) points up. */
export function toCanvas(x: number, y: number, size: number): { cx: number; cy: number } {
  return { cx: ((x + 1) / 2) * size, cy: ((1 - y) / 2) * size };
}

export const SMOOTHING_ALPHA = 0.3;
export const TRAIL_SECONDS = 30;

/**
 * Exponential moving average over incoming class codes, one update per
 * prediction message, plus a bounded trail of the smoothed points.
 */
export class DotSmoother {
  private smoothed: DotPoint | null = null;
  private points: DotPoint[] = [];

  constructor(
    private alpha: number = SMOOTHING_ALPHA,
    private trailSeconds: number = TRAIL_SECONDS,
  ) {}

  push(t: number, arousal: AffectCode, valence: AffectCode): DotPoint {
    const prev = this.smoothed;
    const next: DotPoint = prev === null
      ? { x: valence, y: arousal, t }
      : {
        x: prev.x + this.alpha * (valence - prev.x),
        y: prev.y + this.alpha * (arousal - prev.y),
        t,
      };
    this.smoothed = next;
    this.points.push(next);
    const cutoff = t - this.trailSeconds;
    while (this.points.length > 0 && this.points[0].t < cutoff) {
      this.points.shift();
    }
    return next;
  }

  current(): DotPoint | null {
    return this.smoothed;
  }

  trail(): readonly DotPoint[] {
    return this.points;
  }

  reset(): void {
    this.smoothed = null;
    this.points = [];
  }
}
