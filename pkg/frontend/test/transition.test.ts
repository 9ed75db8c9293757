import { describe, expect, it } from "vitest";

import { ClientMessage } from "../src/protocol.js";
import { TRANSITION_SCHEDULE, TransitionRunner } from "../src/transition.js";
import { FakeClock } from "./fakes.js";

describe("transition automation", () => {
  it("emits exactly the 6 scheduled weight pairs at 10 s intervals", () => {
    const clock = new FakeClock();
    const sent: { atMs: number; message: ClientMessage }[] = [];
    const runner = new TransitionRunner(
      "Accordion",
      "Ambient",
      (message) => sent.push({ atMs: clock.now(), message }),
      clock,
    );
    runner.start();
    clock.advance(70_000);

    expect(sent.length).toBe(6);
    sent.forEach(({ atMs, message }, k) => {
      const [weightB, weightA] = TRANSITION_SCHEDULE[k];
      expect(Math.abs(atMs - k * 10_000)).toBeLessThanOrEqual(200);
      expect(message.type).toBe("set_prompts");
      if (message.type !== "set_prompts") return;
      expect(message.prompts).toEqual([
        { text: "Accordion", weight: weightA },
        { text: "Ambient", weight: weightB },
      ]);
    });
  });

  it("starts and ends with pure single-prompt mixes", () => {
    const clock = new FakeClock();
    const sent: ClientMessage[] = [];
    new TransitionRunner("a", "b", (m) => sent.push(m), clock).start();
    clock.advance(60_000);
    const first = sent[0];
    const last = sent[sent.length - 1];
    if (first.type === "set_prompts" && last.type === "set_prompts") {
      expect(first.prompts[1].weight).toBe(0);
      expect(last.prompts[0].weight).toBe(0);
    } else {
      throw new Error("expected set_prompts messages");
    }
  });

  it("signals completion and can be cancelled", () => {
    const clock = new FakeClock();
    let done = false;
    const sent: ClientMessage[] = [];
    const runner = new TransitionRunner(
      "a",
      "b",
      (m) => sent.push(m),
      clock,
      () => {
        done = true;
      },
    );
    runner.start();
    clock.advance(25_000);
    runner.cancel();
    clock.advance(60_000);
    expect(sent.length).toBe(3); // windows 0, 1, 2 only
    expect(done).toBe(false);
  });

  it("rejects a double start", () => {
    const clock = new FakeClock();
    const runner = new TransitionRunner("a", "b", () => {}, clock);
    runner.start();
    expect(() => runner.start()).toThrow();
  });
});
