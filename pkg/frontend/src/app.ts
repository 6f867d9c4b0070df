// Headless application core: every workflow the UI offers, with no DOM.
// The browser layer (views.ts) renders what these methods return and the
// end-to-end test drives them directly against a live server.

import {
  ApiClient,
  type Bounds,
  type ManifoldView,
  type SelectedRef,
  type Task,
} from "./api.js";
import {
  GridPager,
  RateLimiter,
  RequestGate,
  SessionCountdown,
  TaskStopwatch,
  clampSlider,
  clampToBounds,
  randomSliders,
  seedFromString,
  splitmix32,
  type Clock,
  type Scheduler,
} from "./state.js";

export interface ShownImage {
  url: string;
  bytes: Uint8Array;
}

export interface AppHooks {
  onStudyImage?: (image: ShownImage) => void;
  onExploreImage?: (image: ShownImage, z: number[]) => void;
  onError?: (error: unknown) => void;
}

export class AppSession {
  readonly api: ApiClient;
  readonly participant: string;

  sessionId: string | null = null;
  countdown: SessionCountdown | null = null;
  sliders: number[] = [50, 50, 50, 50, 50];
  studyImage: ShownImage | null = null;

  exploreFilter = "all";
  manifoldView: ManifoldView | null = null;
  controlPoint: [number, number] | null = null;
  exploreImage: ShownImage | null = null;
  exploreZ: number[] | null = null;

  activeTask: Task | null = null;
  private stopwatch: TaskStopwatch | null = null;

  pager: GridPager;

  private readonly hooks: AppHooks;
  private readonly now: Clock;
  private readonly decodeLimiter: RateLimiter<number[]>;
  private readonly locateLimiter: RateLimiter<[number, number]>;
  private readonly decodeGate = new RequestGate();
  private readonly locateGate = new RequestGate();
  private rand: () => number = Math.random;

  constructor(
    api: ApiClient,
    participant = "anonymous",
    hooks: AppHooks = {},
    options: { now?: Clock; schedule?: Scheduler; intervalMs?: number } = {},
  ) {
    this.api = api;
    this.participant = participant;
    this.hooks = hooks;
    this.now = options.now ?? (() => Date.now());
    this.decodeLimiter = new RateLimiter(
      (sliders) => void this.requestDecode(sliders),
      options.intervalMs,
      this.now,
      options.schedule,
    );
    this.locateLimiter = new RateLimiter(
      ([x, y]) => void this.requestLocate(x, y),
      options.intervalMs,
      this.now,
      options.schedule,
    );
    this.pager = new GridPager((offset, limit) => api.gridPage(offset, limit));
  }

  // -- study ----------------------------------------------------------------

  async start(): Promise<string> {
    const created = await this.api.createSession(this.participant);
    this.sessionId = created.session_id;
    this.countdown = new SessionCountdown(this.now());
    this.rand = splitmix32(seedFromString(this.sessionId));
    await this.requestDecode(this.sliders);
    return this.sessionId;
  }

  labelingEnabled(): boolean {
    return this.countdown !== null && !this.countdown.expired(this.now());
  }

  moveSlider(index: number, value: number): void {
    this.sliders[index] = clampSlider(value);
    this.decodeLimiter.push([...this.sliders]);
  }

  randomizeSliders(): void {
    this.sliders = randomSliders(this.rand);
    this.decodeLimiter.push([...this.sliders]);
  }

  private async requestDecode(sliders: number[]): Promise<void> {
    const token = this.decodeGate.begin();
    try {
      const url = this.api.decodeUrl(sliders);
      const bytes = await this.api.fetchBytes(url);
      if (!this.decodeGate.isCurrent(token)) return; // stale response
      this.studyImage = { url, bytes };
      this.hooks.onStudyImage?.(this.studyImage);
    } catch (error) {
      this.hooks.onError?.(error);
    }
  }

  /** Flush any pending slider change and wait for its image. */
  async settleDecode(): Promise<ShownImage> {
    await this.requestDecode([...this.sliders]);
    if (!this.studyImage) throw new Error("decode produced no image");
    return this.studyImage;
  }

  async submitLabel(label: string) {
    if (!this.sessionId) throw new Error("no session");
    return this.api.submitLabel(this.sessionId, [...this.sliders], label);
  }

  // -- explore ----------------------------------------------------------------

  async loadManifold(filter: string): Promise<ManifoldView> {
    const view = await this.api.manifold(filter);
    this.exploreFilter = filter;
    this.manifoldView = view;
    if (this.controlPoint) {
      // same control point, new perception filter: re-locate immediately
      const [x, y] = clampToBounds(this.controlPoint[0], this.controlPoint[1], view.bounds);
      this.controlPoint = [x, y];
      await this.requestLocate(x, y);
    }
    return view;
  }

  get bounds(): Bounds | null {
    return this.manifoldView?.bounds ?? null;
  }

  dragControlPoint(x: number, y: number): void {
    if (!this.manifoldView) return;
    const [cx, cy] = clampToBounds(x, y, this.manifoldView.bounds);
    this.controlPoint = [cx, cy];
    this.locateLimiter.push([cx, cy]);
  }

  private async requestLocate(x: number, y: number): Promise<void> {
    const token = this.locateGate.begin();
    try {
      const result = await this.api.locate(x, y, this.exploreFilter);
      if (!this.locateGate.isCurrent(token)) return;
      const bytes = await this.api.fetchBytes(result.image);
      if (!this.locateGate.isCurrent(token)) return;
      this.exploreZ = result.z;
      this.exploreImage = { url: result.image, bytes };
      this.hooks.onExploreImage?.(this.exploreImage, result.z);
    } catch (error) {
      this.hooks.onError?.(error);
    }
  }

  /** Flush the newest control point and wait for its image. */
  async settleLocate(): Promise<ShownImage> {
    if (!this.controlPoint) throw new Error("no control point");
    await this.requestLocate(this.controlPoint[0], this.controlPoint[1]);
    if (!this.exploreImage) throw new Error("locate produced no image");
    return this.exploreImage;
  }

  // -- comparison tasks --------------------------------------------------------

  async beginTask(iface: "manifold" | "grid"): Promise<Task | null> {
    const task = await this.api.nextTask(iface, this.participant);
    this.activeTask = task;
    if (task) {
      this.stopwatch = new TaskStopwatch(this.now());
    }
    return task;
  }

  taskElapsedMs(): number {
    if (!this.stopwatch) throw new Error("no active task");
    return this.stopwatch.elapsedMs(this.now());
  }

  private async answerActiveTask(selected: SelectedRef) {
    if (!this.activeTask) throw new Error("no active task");
    const record = await this.api.answerTask(
      this.activeTask.task_id,
      selected,
      this.taskElapsedMs(),
      this.participant,
    );
    this.activeTask = null;
    this.stopwatch = null;
    return record;
  }

  /** Confirm the currently explored font as the answer (manifold arm). */
  async confirmExplore() {
    if (!this.exploreZ) throw new Error("nothing explored yet");
    return this.answerActiveTask({ z: [...this.exploreZ] });
  }

  /** Confirm a clicked grid cell as the answer (grid arm). */
  async confirmGridCell(corpusIndex: number) {
    return this.answerActiveTask({ corpus_index: corpusIndex });
  }
}
