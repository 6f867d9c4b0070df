// Typed client for the fontmanifold HTTP API. Every image byte the UI
// displays comes from these endpoints; the client never synthesizes glyphs.

export interface Bounds {
  x_min: number;
  x_max: number;
  y_min: number;
  y_max: number;
}

export interface ManifoldPoint {
  x: number;
  y: number;
  label: string;
  id: string;
}

export interface ManifoldView {
  points: ManifoldPoint[];
  heatmap: string;
  bounds: Bounds;
}

export interface LocateResult {
  z: number[];
  image: string;
}

export interface Task {
  task_id: string;
  interface: "manifold" | "grid";
  target_id: string;
  target_image: string;
  issued_at_ms: number;
}

export interface GridItem {
  id: string;
  index: number;
  image: string;
}

export interface GridPage {
  total: number;
  offset: number;
  items: GridItem[];
}

export interface LabelRecord {
  sample_id: string;
  session_id: string;
  sliders: number[];
  label: string;
}

export interface AnswerRecord {
  task_id: string;
  interface: string;
  ssim: number;
  elapsed_ms: number;
}

export type SelectedRef = { z: number[] } | { corpus_index: number };

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  url(path: string): string {
    if (path.startsWith("http://") || path.startsWith("https://")) {
      return path; // already absolute (e.g. a stored decodeUrl)
    }
    return this.baseUrl + path;
  }

  decodeUrl(sliders: number[], scale = 8): string {
    return this.url(`/api/decode?sliders=${sliders.join(",")}&scale=${scale}`);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.url(path), init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { error?: string };
        if (body.error) detail = body.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createSession(participant: string): Promise<{ session_id: string }> {
    return this.post("/api/sessions", { participant });
  }

  submitLabel(sessionId: string, sliders: number[], label: string): Promise<LabelRecord> {
    return this.post("/api/labels", { session_id: sessionId, sliders, label });
  }

  manifold(label: string): Promise<ManifoldView> {
    return this.request(`/api/manifold?label=${encodeURIComponent(label)}`);
  }

  locate(x: number, y: number, label: string): Promise<LocateResult> {
    return this.post("/api/locate", { x, y, label });
  }

  nextTask(iface: "manifold" | "grid", participant: string): Promise<Task | null> {
    return this.request<{ task: Task | null }>(
      `/api/tasks/next?interface=${iface}&participant=${encodeURIComponent(participant)}`,
    ).then((body) => body.task);
  }

  answerTask(
    taskId: string,
    selected: SelectedRef,
    elapsedMs: number,
    participant: string,
  ): Promise<AnswerRecord> {
    return this.post(`/api/tasks/${taskId}/answer`, {
      selected,
      elapsed_ms: elapsedMs,
      participant,
    });
  }

  gridPage(offset: number, limit: number): Promise<GridPage> {
    return this.request(`/api/grid?offset=${offset}&limit=${limit}`);
  }

  report(): Promise<unknown> {
    return this.request("/api/report");
  }

  async fetchBytes(path: string): Promise<Uint8Array> {
    const response = await this.fetchFn(this.url(path));
    if (!response.ok) {
      throw new ApiError(response.status, response.statusText);
    }
    return new Uint8Array(await response.arrayBuffer());
  }
}
