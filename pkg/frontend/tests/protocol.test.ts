import { describe, expect, it } from "vitest";

import {
  agreeResponse,
  designChanged,
  designFinalized,
  eegCaptured,
  eventBody,
  parseFeed,
  samProbeResponse,
  samRatingFrom,
  samSubmitted,
  startSession,
  stimulusShown,
} from "../src/protocol.js";

describe("event bodies", () => {
  // The server parses these bodies verbatim; every byte is contract.
  it.each<[string, string]>([
    [eventBody(startSession()), '{"kind":"StartSession"}'],
    [eventBody(stimulusShown(7)), '{"kind":"StimulusShown","stimulus_id":7}'],
    [
      eventBody(eegCaptured(3, 41.5, 10)),
      '{"kind":"EegCaptured","stimulus_id":3,"start":41.5,"duration":10}',
    ],
    [
      eventBody(samSubmitted({ arousal: 4, valence: 2 })),
      '{"kind":"SamSubmitted","rating":{"arousal":4,"valence":2}}',
    ],
    [
      eventBody(designChanged({ envelope: 5, layout: 0, fixture: 0, colors: [0, 0, 0] })),
      '{"kind":"DesignChanged","design":{"envelope":5,"layout":0,"fixture":0,"colors":[0,0,0]}}',
    ],
    [eventBody(agreeResponse(true)), '{"kind":"AgreeResponse","agree":true}'],
    [eventBody(agreeResponse(false)), '{"kind":"AgreeResponse","agree":false}'],
    [
      eventBody(samProbeResponse({ arousal: 1, valence: 5 })),
      '{"kind":"SamProbeResponse","rating":{"arousal":1,"valence":5}}',
    ],
    [eventBody(designFinalized()), '{"kind":"DesignFinalized"}'],
  ])("%s", (body, expected) => {
    expect(body).toBe(expected);
  });
});

describe("SAM round-trip", () => {
  it("slider values survive the wire form for both SAM events", () => {
    for (let arousal = 1; arousal <= 5; arousal++) {
      for (let valence = 1; valence <= 5; valence++) {
        for (const build of [samSubmitted, samProbeResponse]) {
          const body = eventBody(build({ arousal, valence }));
          expect(samRatingFrom(JSON.parse(body))).toEqual({ arousal, valence });
        }
      }
    }
  });

  it.each([0, 6, 2.5, NaN])("rejects out-of-scale rating %s", (bad) => {
    expect(() => samSubmitted({ arousal: bad, valence: 3 })).toThrow(/1-5/);
    expect(() => samProbeResponse({ arousal: 3, valence: bad })).toThrow(/1-5/);
  });
});

describe("feed parsing", () => {
  it("recognizes state snapshots", () => {
    const msg = parseFeed('{"kind":"state","state":{"phase":"Idle"}}');
    expect(msg).not.toBeNull();
    expect(msg && "kind" in msg && msg.state.phase).toBe("Idle");
  });

  it("recognizes versioned prediction messages", () => {
    // Key order matches the server encoder (sorted keys).
    const raw = '{"arousal":1,"arousal_scores":[0.2,0.1,0.9],'
      + '"session_phase":"FreeDesign","t":12.5,"v":1,"valence":-1}';
    const msg = parseFeed(raw);
    expect(msg).not.toBeNull();
    if (msg === null || "kind" in msg) throw new Error("expected prediction");
    expect(msg.arousal).toBe(1);
    expect(msg.valence).toBe(-1);
    expect(msg.t).toBe(12.5);
    expect(msg.arousal_scores).toEqual([0.2, 0.1, 0.9]);
  });

  it.each([
    "not json",
    "[1,2]",
    '{"kind":"state"}',
    '{"v":2,"t":0,"arousal":1,"valence":1}',
    '{"t":0,"arousal":3,"valence":0,"v":1}',
  ])("ignores unknown payload %s", (raw) => {
    expect(parseFeed(raw)).toBeNull();
  });
});
