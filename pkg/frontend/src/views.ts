// Thin DOM layer over AppSession: three views (study / explore / grid),
// one confirmation modal. All images are blob URLs of server-fetched bytes.

import type { GridItem, Task } from "./api.js";
import { AppSession, type ShownImage } from "./app.js";
import { dataToPixel, pixelToData } from "./state.js";

function el<T extends HTMLElement>(selector: string, root: ParentNode = document): T {
  const found = root.querySelector(selector);
  if (!found) throw new Error(`missing element ${selector}`);
  return found as T;
}

function blobUrl(image: ShownImage): string {
  const blob = new Blob([image.bytes.slice().buffer], { type: "image/png" });
  return URL.createObjectURL(blob);
}

function setImage(img: HTMLImageElement, image: ShownImage): void {
  const previous = img.dataset.blobUrl;
  const url = blobUrl(image);
  img.src = url;
  img.dataset.blobUrl = url;
  if (previous) URL.revokeObjectURL(previous);
}

export function renderShell(root: HTMLElement): void {
  root.innerHTML = `
    <header>
      <h1>Font manifold explorer</h1>
      <nav>
        <button data-mode="study" class="active">Perceptual study</button>
        <button data-mode="explore">Manifold explorer</button>
        <button data-mode="grid">Font grid</button>
      </nav>
      <div id="task-banner" class="hidden">
        <span>Find this font:</span>
        <img id="task-target" alt="target font" />
        <span id="task-id"></span>
      </div>
    </header>
    <main>
      <section id="study-view">
        <div class="panel">
          <img id="study-image" alt="decoded font" width="224" height="224" />
          <div id="countdown" title="advisory survey budget"></div>
        </div>
        <div class="panel">
          <div id="sliders"></div>
          <button id="random-start">Changing a Starting Font</button>
          <div class="label-buttons">
            <button data-label="POP">POP</button>
            <button data-label="Formal">Formal</button>
            <button data-label="Casual">Casual</button>
          </div>
          <div id="study-status"></div>
        </div>
      </section>
      <section id="explore-view" class="hidden">
        <div class="panel">
          <img id="explore-image" alt="located font" width="224" height="224" />
          <div class="filter-buttons">
            <button data-filter="all" class="active">All</button>
            <button data-filter="pop">POP</button>
            <button data-filter="formal">Formal</button>
            <button data-filter="casual">Casual</button>
          </div>
        </div>
        <div class="panel heatmap-panel">
          <img id="heatmap" alt="perception heatmap" width="512" height="512" draggable="false" />
          <div id="control-point"></div>
          <div id="explore-status"></div>
        </div>
      </section>
      <section id="grid-view" class="hidden">
        <div id="grid-cells"></div>
        <div id="grid-status"></div>
      </section>
    </main>
    <div id="modal" class="hidden">
      <div class="modal-box">
        <p>Use this font?</p>
        <img id="modal-image" alt="selected font" width="168" height="168" />
        <div>
          <button id="modal-confirm">Confirm</button>
          <button id="modal-cancel">Cancel</button>
        </div>
      </div>
    </div>`;
}

function openModal(imageSrc: string): Promise<boolean> {
  const modal = el<HTMLDivElement>("#modal");
  el<HTMLImageElement>("#modal-image").src = imageSrc;
  modal.classList.remove("hidden");
  return new Promise((resolve) => {
    const done = (answer: boolean) => {
      modal.classList.add("hidden");
      confirm.removeEventListener("click", yes);
      cancel.removeEventListener("click", no);
      resolve(answer);
    };
    const yes = () => done(true);
    const no = () => done(false);
    const confirm = el<HTMLButtonElement>("#modal-confirm");
    const cancel = el<HTMLButtonElement>("#modal-cancel");
    confirm.addEventListener("click", yes);
    cancel.addEventListener("click", no);
  });
}

function flash(target: HTMLElement, message: string): void {
  target.textContent = message;
  target.classList.add("flash");
  setTimeout(() => target.classList.remove("flash"), 700);
}

async function showTaskBanner(app: AppSession, task: Task | null): Promise<void> {
  const banner = el<HTMLDivElement>("#task-banner");
  if (!task) {
    banner.classList.add("hidden");
    return;
  }
  const bytes = await app.api.fetchBytes(task.target_image + "?scale=6");
  setImage(el<HTMLImageElement>("#task-target"), { url: task.target_image, bytes });
  el<HTMLSpanElement>("#task-id").textContent = task.task_id;
  banner.classList.remove("hidden");
}

function wireStudy(app: AppSession): void {
  const slidersBox = el<HTMLDivElement>("#sliders");
  slidersBox.innerHTML = app.sliders
    .map(
      (value, i) => `
      <label>z${i + 1}
        <input type="range" min="0" max="99" step="1" value="${value}" data-index="${i}" />
        <span data-value="${i}">${value}</span>
      </label>`,
    )
    .join("");

  slidersBox.querySelectorAll<HTMLInputElement>("input[type=range]").forEach((input) => {
    input.addEventListener("input", () => {
      const index = Number(input.dataset.index);
      app.moveSlider(index, Number(input.value));
      el<HTMLSpanElement>(`span[data-value="${index}"]`, slidersBox).textContent = input.value;
    });
  });

  el<HTMLButtonElement>("#random-start").addEventListener("click", () => {
    app.randomizeSliders();
    app.sliders.forEach((value, i) => {
      const input = el<HTMLInputElement>(`input[data-index="${i}"]`, slidersBox);
      input.value = String(value);
      el<HTMLSpanElement>(`span[data-value="${i}"]`, slidersBox).textContent = String(value);
    });
  });

  document.querySelectorAll<HTMLButtonElement>("[data-label]").forEach((button) => {
    button.addEventListener("click", async () => {
      try {
        await app.submitLabel(button.dataset.label as string);
        flash(el("#study-status"), `saved ${button.dataset.label}`);
      } catch (error) {
        flash(el("#study-status"), String(error));
      }
    });
  });

  const tick = () => {
    if (!app.countdown) return;
    el<HTMLDivElement>("#countdown").textContent = app.countdown.display(Date.now());
    const expired = !app.labelingEnabled();
    document
      .querySelectorAll<HTMLButtonElement>("[data-label]")
      .forEach((button) => (button.disabled = expired));
  };
  setInterval(tick, 1000);
  tick();
}

function wireExplore(app: AppSession): void {
  const heatmap = el<HTMLImageElement>("#heatmap");
  const point = el<HTMLDivElement>("#control-point");
  const panel = el<HTMLDivElement>(".heatmap-panel");

  const refreshHeatmap = async (filter: string) => {
    try {
      const view = await app.loadManifold(filter);
      const bytes = await app.api.fetchBytes(view.heatmap);
      setImage(heatmap, { url: view.heatmap, bytes });
      el<HTMLDivElement>("#explore-status").textContent =
        `${view.points.length} labeled samples`;
      positionPoint();
    } catch (error) {
      el<HTMLDivElement>("#explore-status").textContent = String(error);
    }
  };

  const positionPoint = () => {
    if (!app.controlPoint || !app.bounds) {
      point.classList.add("hidden");
      return;
    }
    const rect = heatmap.getBoundingClientRect();
    const [px, py] = dataToPixel(
      app.controlPoint[0],
      app.controlPoint[1],
      rect.width || heatmap.width,
      rect.height || heatmap.height,
      app.bounds,
    );
    point.style.left = `${px}px`;
    point.style.top = `${py}px`;
    point.classList.remove("hidden");
  };

  const dragAt = (event: PointerEvent) => {
    if (!app.bounds) return;
    const rect = heatmap.getBoundingClientRect();
    const [x, y] = pixelToData(
      event.clientX - rect.left,
      event.clientY - rect.top,
      rect.width,
      rect.height,
      app.bounds,
    );
    app.dragControlPoint(x, y);
    positionPoint();
  };

  let dragging = false;
  heatmap.addEventListener("pointerdown", (event) => {
    dragging = true;
    heatmap.setPointerCapture(event.pointerId);
    dragAt(event);
  });
  heatmap.addEventListener("pointermove", (event) => {
    if (dragging) dragAt(event);
  });
  heatmap.addEventListener("pointerup", () => {
    dragging = false;
  });

  document.querySelectorAll<HTMLButtonElement>("[data-filter]").forEach((button) => {
    button.addEventListener("click", () => {
      document
        .querySelectorAll("[data-filter]")
        .forEach((other) => other.classList.toggle("active", other === button));
      void refreshHeatmap(button.dataset.filter as string);
    });
  });

  el<HTMLImageElement>("#explore-image").addEventListener("click", async () => {
    const image = el<HTMLImageElement>("#explore-image");
    if (!image.src || !app.exploreZ) return;
    const confirmed = await openModal(image.src);
    if (!confirmed) return;
    if (app.activeTask && app.activeTask.interface === "manifold") {
      const record = await app.confirmExplore();
      flash(el("#explore-status"), `answered, SSIM ${record.ssim.toFixed(3)}`);
      await showTaskBanner(app, await app.beginTask("manifold"));
    } else {
      flash(el("#explore-status"), "font confirmed");
    }
  });

  panel.dataset.wired = "true";
  void refreshHeatmap("all");
}

function wireGrid(app: AppSession): void {
  const cells = el<HTMLDivElement>("#grid-cells");
  const status = el<HTMLDivElement>("#grid-status");

  const appendItems = (items: GridItem[]) => {
    for (const item of items) {
      const img = document.createElement("img");
      img.loading = "lazy";
      img.width = 56;
      img.height = 56;
      img.alt = item.id;
      img.src = app.api.url(item.image + "?scale=2");
      img.dataset.index = String(item.index);
      img.addEventListener("click", async () => {
        const scroll = el<HTMLElement>("#grid-view").scrollTop;
        const confirmed = await openModal(img.src);
        el<HTMLElement>("#grid-view").scrollTop = scroll; // cancel keeps position
        if (!confirmed) return;
        if (app.activeTask && app.activeTask.interface === "grid") {
          const record = await app.confirmGridCell(item.index);
          flash(status, `answered, SSIM ${record.ssim.toFixed(3)}`);
          await showTaskBanner(app, await app.beginTask("grid"));
        } else {
          flash(status, `selected ${item.id}`);
        }
      });
      cells.appendChild(img);
    }
    status.textContent = app.pager.done
      ? `all ${app.pager.totalCount} fonts loaded`
      : `${app.pager.loadedCount} of ${app.pager.totalCount ?? "?"} fonts`;
  };

  const maybeLoadMore = async () => {
    const view = el<HTMLElement>("#grid-view");
    while (
      !app.pager.done &&
      view.scrollTop + view.clientHeight >= view.scrollHeight - 600
    ) {
      appendItems(await app.pager.loadNext());
    }
  };

  el<HTMLElement>("#grid-view").addEventListener("scroll", () => void maybeLoadMore());
  void app.pager.loadNext().then((items) => {
    appendItems(items);
    void maybeLoadMore();
  });
}

export async function boot(root: HTMLElement, app: AppSession): Promise<void> {
  renderShell(root);

  document.querySelectorAll<HTMLButtonElement>("nav [data-mode]").forEach((button) => {
    button.addEventListener("click", async () => {
      document
        .querySelectorAll("nav [data-mode]")
        .forEach((other) => other.classList.toggle("active", other === button));
      const mode = button.dataset.mode as "study" | "explore" | "grid";
      el("#study-view").classList.toggle("hidden", mode !== "study");
      el("#explore-view").classList.toggle("hidden", mode !== "explore");
      el("#grid-view").classList.toggle("hidden", mode !== "grid");
      if (mode === "explore" || mode === "grid") {
        await showTaskBanner(app, await app.beginTask(mode === "grid" ? "grid" : "manifold"));
      } else {
        await showTaskBanner(app, null);
      }
    });
  });

  await app.start();
  wireStudy(app);
  wireExplore(app);
  wireGrid(app);
}

export { setImage };
