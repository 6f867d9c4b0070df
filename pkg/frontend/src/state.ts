// DOM-free client state: rate limiting, last-write-wins requests, slider
// and control-point bookkeeping, countdowns, grid paging. Everything takes
// injectable clocks/timers so it is testable without a browser.

import type { Bounds, GridItem, GridPage } from "./api.js";

export type Clock = () => number;
export type Scheduler = (fn: () => void, delayMs: number) => void;

export const SLIDER_COUNT = 5;
export const SLIDER_MAX = 99;
export const SESSION_BUDGET_MS = 300_000; // advisory five-minute survey limit
export const REQUEST_INTERVAL_MS = 50; // <= 20 requests/s toward the server

/** Trailing-latest rate limiter: fires immediately when idle, otherwise
 * remembers only the newest payload and flushes it at the interval edge.
 * A single change therefore issues exactly one call, and a drag of n
 * points issues at most n (last one always wins). */
export class RateLimiter<T> {
  private lastFire = -Infinity;
  private pending: T | undefined;
  private timerArmed = false;

  constructor(
    private readonly emit: (value: T) => void,
    private readonly intervalMs: number = REQUEST_INTERVAL_MS,
    private readonly now: Clock = () => Date.now(),
    private readonly schedule: Scheduler = (fn, ms) => {
      setTimeout(fn, ms);
    },
  ) {}

  push(value: T): void {
    const at = this.now();
    if (!this.timerArmed && at - this.lastFire >= this.intervalMs) {
      this.lastFire = at;
      this.emit(value);
      return;
    }
    this.pending = value;
    if (!this.timerArmed) {
      this.timerArmed = true;
      this.schedule(() => this.flush(), this.intervalMs - (at - this.lastFire));
    }
  }

  private flush(): void {
    this.timerArmed = false;
    if (this.pending === undefined) return;
    const value = this.pending;
    this.pending = undefined;
    this.lastFire = this.now();
    this.emit(value);
  }
}

/** Sequence tokens for last-write-wins responses: at most one in-flight
 * result is ever applied, and it is always the newest one. */
export class RequestGate {
  private seq = 0;

  begin(): number {
    return ++this.seq;
  }

  isCurrent(token: number): boolean {
    return token === this.seq;
  }
}

export function clampSlider(value: number): number {
  return Math.min(SLIDER_MAX, Math.max(0, Math.round(value)));
}

export function validSliders(values: number[]): boolean {
  return (
    values.length === SLIDER_COUNT &&
    values.every((v) => Number.isInteger(v) && v >= 0 && v <= SLIDER_MAX)
  );
}

export function clampToBounds(x: number, y: number, bounds: Bounds): [number, number] {
  return [
    Math.min(bounds.x_max, Math.max(bounds.x_min, x)),
    Math.min(bounds.y_max, Math.max(bounds.y_min, y)),
  ];
}

/** Heatmap pixel <-> data-space mapping; image row 0 is the y_max edge. */
export function pixelToData(
  px: number,
  py: number,
  width: number,
  height: number,
  bounds: Bounds,
): [number, number] {
  const x = bounds.x_min + (px / width) * (bounds.x_max - bounds.x_min);
  const y = bounds.y_max - (py / height) * (bounds.y_max - bounds.y_min);
  return clampToBounds(x, y, bounds);
}

export function dataToPixel(
  x: number,
  y: number,
  width: number,
  height: number,
  bounds: Bounds,
): [number, number] {
  const px = ((x - bounds.x_min) / (bounds.x_max - bounds.x_min)) * width;
  const py = ((bounds.y_max - y) / (bounds.y_max - bounds.y_min)) * height;
  return [px, py];
}

/** splitmix32: tiny deterministic PRNG so "Changing a Starting Font" is
 * reproducible within a session. */
export function splitmix32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x9e3779b9) >>> 0;
    let z = state;
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
    z = (z ^ (z >>> 15)) >>> 0;
    return z / 4294967296;
  };
}

export function seedFromString(text: string): number {
  let h = 2166136261 >>> 0;
  for (let i = 0; i < text.length; i++) {
    h = Math.imul(h ^ text.charCodeAt(i), 16777619) >>> 0;
  }
  return h;
}

export function randomSliders(rand: () => number): number[] {
  return Array.from({ length: SLIDER_COUNT }, () => Math.floor(rand() * (SLIDER_MAX + 1)));
}

/** Advisory five-minute countdown from session creation. */
export class SessionCountdown {
  constructor(
    private readonly startedAtMs: number,
    private readonly budgetMs: number = SESSION_BUDGET_MS,
  ) {}

  remainingMs(now: number): number {
    return Math.max(0, this.startedAtMs + this.budgetMs - now);
  }

  expired(now: number): boolean {
    return this.remainingMs(now) === 0;
  }

  display(now: number): string {
    const seconds = Math.ceil(this.remainingMs(now) / 1000);
    const m = Math.floor(seconds / 60);
    const s = seconds % 60;
    return `${m}:${s.toString().padStart(2, "0")}`;
  }
}

/** elapsed_ms measured from task display to confirmation; always >= 1. */
export class TaskStopwatch {
  private startedAt: number;

  constructor(now: number) {
    this.startedAt = now;
  }

  restart(now: number): void {
    this.startedAt = now;
  }

  elapsedMs(now: number): number {
    return Math.max(1, Math.round(now - this.startedAt));
  }
}

/** Sequential pager over /api/grid: every cell is requested exactly once,
 * in order, until the corpus is exhausted. */
export class GridPager {
  private offset = 0;
  private total: number | null = null;
  private loading = false;

  constructor(
    private readonly fetchPage: (offset: number, limit: number) => Promise<GridPage>,
    private readonly pageSize: number = 50,
  ) {}

  get done(): boolean {
    return this.total !== null && this.offset >= this.total;
  }

  get loadedCount(): number {
    return this.offset;
  }

  get totalCount(): number | null {
    return this.total;
  }

  async loadNext(): Promise<GridItem[]> {
    if (this.done || this.loading) return [];
    this.loading = true;
    try {
      const page = await this.fetchPage(this.offset, this.pageSize);
      this.total = page.total;
      this.offset += page.items.length;
      if (page.items.length === 0) {
        this.total = this.offset; // server says nothing further
      }
      return page.items;
    } finally {
      this.loading = false;
    }
  }
}
