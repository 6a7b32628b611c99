/**
 * Display catalog for the lobby design space: 31 envelopes, 21 layouts,
 * 20 ceiling fixtures, one 14-color palette across three slots. Labels
 * mirror the server's generated names so both sides describe a design
 * identically. Swatch hexes are console-only decoration.
 */

import type { Design } from "./protocol.js";

export const ENVELOPE_COUNT = 31;
export const LAYOUT_COUNT = 21;
export const FIXTURE_COUNT = 20;
export const PALETTE_COUNT = 14;

export const COLOR_SLOTS = ["walls", "floor", "furniture"] as const;

export function optionLabel(prefix: string, i: number): string {
  return `${prefix} ${String(i).padStart(2, "0")}`;
}

export function optionLabels(prefix: string, count: number): string[] {
  return Array.from({ length: count }, (_, i) => optionLabel(prefix, i));
}

export const PALETTE_HEX = [
  "#e8e3d9", "#c9b79c", "#8a7b66", "#4a4036", "#b03a2e", "#d98e32",
  "#e7c84b", "#5c8a4e", "#2e6d5c", "#3b6ea5", "#30425e", "#7b5ba6",
  "#c78ba4", "#70757a",
] as const;

export type DesignField = "envelope" | "layout" | "fixture" | 0 | 1 | 2;

/** Copy with exactly one field replaced; the protocol forbids wider steps. */
export function withField(design: Design, field: DesignField, value: number): Design {
  const next: Design = {
    envelope: design.envelope,
    layout: design.layout,
    fixture: design.fixture,
    colors: [design.colors[0], design.colors[1], design.colors[2]],
  };
  if (field === "envelope" || field === "layout" || field === "fixture") {
    next[field] = value;
  } else {
    next.colors[field] = value;
  }
  return next;
}

export function describeDesign(design: Design): string {
  const colors = design.colors
    .map((c, i) => `${COLOR_SLOTS[i]} ${optionLabel("palette", c)}`)
    .join(", ");
  return `${optionLabel("envelope", design.envelope)}, `
    + `${optionLabel("layout", design.layout)}, `
    + `${optionLabel("fixture", design.fixture)}, ${colors}`;
}
