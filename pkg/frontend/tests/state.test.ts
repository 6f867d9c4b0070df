import { describe, expect, it } from "vitest";

import type { GridPage } from "../src/api.js";
import {
  GridPager,
  RateLimiter,
  RequestGate,
  SESSION_BUDGET_MS,
  SessionCountdown,
  TaskStopwatch,
  clampSlider,
  clampToBounds,
  dataToPixel,
  pixelToData,
  randomSliders,
  seedFromString,
  splitmix32,
  validSliders,
} from "../src/state.js";

/** Manual clock + timer queue so limiter behavior is exact. */
class FakeTimeline {
  now = 0;
  private queue: Array<{ at: number; fn: () => void }> = [];

  schedule = (fn: () => void, delayMs: number): void => {
    this.queue.push({ at: this.now + delayMs, fn });
  };

  advance(toMs: number): void {
    this.queue.sort((a, b) => a.at - b.at);
    while (this.queue.length > 0 && this.queue[0]!.at <= toMs) {
      const next = this.queue.shift()!;
      this.now = next.at;
      next.fn();
    }
    this.now = toMs;
  }
}

describe("RateLimiter", () => {
  it("a single change issues exactly one request", () => {
    const t = new FakeTimeline();
    const fired: number[][] = [];
    const limiter = new RateLimiter<number[]>((v) => fired.push(v), 50, () => t.now, t.schedule);
    limiter.push([1, 2, 3, 4, 5]);
    t.advance(1000);
    expect(fired).toEqual([[1, 2, 3, 4, 5]]);
  });

  it("a burst collapses to leading plus trailing-latest", () => {
    const t = new FakeTimeline();
    const fired: number[] = [];
    const limiter = new RateLimiter<number>((v) => fired.push(v), 50, () => t.now, t.schedule);
    for (let i = 0; i < 10; i++) {
      limiter.push(i);
      t.advance(t.now + 1);
    }
    t.advance(1000);
    expect(fired[0]).toBe(0); // leading edge
    expect(fired[fired.length - 1]).toBe(9); // last one wins
    expect(fired.length).toBeLessThanOrEqual(10);
  });

  it("never exceeds one request per interval", () => {
    const t = new FakeTimeline();
    const times: number[] = [];
    const limiter = new RateLimiter<number>(() => times.push(t.now), 50, () => t.now, t.schedule);
    for (let i = 0; i < 200; i++) {
      limiter.push(i);
      t.advance(t.now + 7);
    }
    t.advance(5000);
    for (let i = 1; i < times.length; i++) {
      expect(times[i]! - times[i - 1]!).toBeGreaterThanOrEqual(50);
    }
    // 200 pushes over ~1.4s at <=20/s
    expect(times.length).toBeLessThanOrEqual(30);
  });

  it("fires again after a quiet period", () => {
    const t = new FakeTimeline();
    const fired: number[] = [];
    const limiter = new RateLimiter<number>((v) => fired.push(v), 50, () => t.now, t.schedule);
    limiter.push(1);
    t.advance(500);
    limiter.push(2);
    t.advance(1000);
    expect(fired).toEqual([1, 2]);
  });
});

describe("RequestGate", () => {
  it("only the newest token is current", () => {
    const gate = new RequestGate();
    const first = gate.begin();
    const second = gate.begin();
    expect(gate.isCurrent(first)).toBe(false);
    expect(gate.isCurrent(second)).toBe(true);
  });
});

describe("slider helpers", () => {
  it("clamps into 0..99", () => {
    expect(clampSlider(-5)).toBe(0);
    expect(clampSlider(120)).toBe(99);
    expect(clampSlider(42.4)).toBe(42);
  });

  it("validates full vectors", () => {
    expect(validSliders([0, 99, 50, 1, 2])).toBe(true);
    expect(validSliders([0, 100, 0, 0, 0])).toBe(false);
    expect(validSliders([0, 1, 2, 3])).toBe(false);
  });

  it("seeded random sliders are reproducible and in range", () => {
    const a = randomSliders(splitmix32(seedFromString("sess-abc")));
    const b = randomSliders(splitmix32(seedFromString("sess-abc")));
    expect(a).toEqual(b);
    expect(a).toHaveLength(5);
    for (const v of a) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(99);
    }
    expect(randomSliders(splitmix32(seedFromString("sess-xyz")))).not.toEqual(a);
  });
});

describe("bounds mapping", () => {
  const bounds = { x_min: -2, x_max: 6, y_min: 1, y_max: 5 };

  it("clamps the control point into bounds", () => {
    expect(clampToBounds(-10, 3, bounds)).toEqual([-2, 3]);
    expect(clampToBounds(7, 99, bounds)).toEqual([6, 5]);
  });

  it("pixel/data round trip with flipped y", () => {
    const [x, y] = pixelToData(256, 128, 512, 512, bounds);
    expect(x).toBeCloseTo(2, 10);
    expect(y).toBeCloseTo(4, 10);
    const [px, py] = dataToPixel(x, y, 512, 512, bounds);
    expect(px).toBeCloseTo(256, 8);
    expect(py).toBeCloseTo(128, 8);
  });

  it("top image row is the y_max edge", () => {
    const [, yTop] = pixelToData(0, 0, 512, 512, bounds);
    expect(yTop).toBe(bounds.y_max);
  });
});

describe("SessionCountdown", () => {
  it("counts five minutes and expires", () => {
    const countdown = new SessionCountdown(1000);
    expect(countdown.remainingMs(1000)).toBe(SESSION_BUDGET_MS);
    expect(countdown.display(1000)).toBe("5:00");
    expect(countdown.expired(1000 + SESSION_BUDGET_MS - 1)).toBe(false);
    expect(countdown.expired(1000 + SESSION_BUDGET_MS)).toBe(true);
    expect(countdown.display(1000 + SESSION_BUDGET_MS)).toBe("0:00");
  });
});

describe("TaskStopwatch", () => {
  it("elapsed is monotone and strictly positive", () => {
    const watch = new TaskStopwatch(100);
    expect(watch.elapsedMs(100)).toBe(1); // never zero
    expect(watch.elapsedMs(1600)).toBe(1500);
    const early = watch.elapsedMs(500);
    const later = watch.elapsedMs(900);
    expect(later).toBeGreaterThanOrEqual(early);
  });
});

describe("GridPager", () => {
  function fakeCorpus(total: number) {
    const requested: number[] = [];
    const fetchPage = async (offset: number, limit: number): Promise<GridPage> => {
      requested.push(offset);
      const items = [];
      for (let i = offset; i < Math.min(offset + limit, total); i++) {
        items.push({ id: `gen-${i}`, index: i, image: `/api/corpus/${i}.png` });
      }
      return { total, offset, items };
    };
    return { requested, fetchPage };
  }

  it("loads every cell exactly once", async () => {
    const { requested, fetchPage } = fakeCorpus(1592);
    const pager = new GridPager(fetchPage, 100);
    const seen: number[] = [];
    while (!pager.done) {
      for (const item of await pager.loadNext()) seen.push(item.index);
    }
    expect(seen).toHaveLength(1592);
    expect(new Set(seen).size).toBe(1592);
    expect(seen).toEqual([...seen].sort((a, b) => a - b));
    expect(requested).toEqual([...new Set(requested)]); // no offset fetched twice
  });

  it("handles an empty corpus", async () => {
    const { fetchPage } = fakeCorpus(0);
    const pager = new GridPager(fetchPage, 50);
    expect(await pager.loadNext()).toEqual([]);
    expect(pager.done).toBe(true);
  });
});
