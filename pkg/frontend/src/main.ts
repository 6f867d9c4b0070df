import { ApiClient } from "./api.js";
import { AppSession } from "./app.js";
import { boot, setImage } from "./views.js";

const participant =
  new URLSearchParams(window.location.search).get("participant") ?? "anonymous";

const app = new AppSession(new ApiClient(""), participant, {
  onStudyImage: (image) => {
    const img = document.querySelector<HTMLImageElement>("#study-image");
    if (img) setImage(img, image);
  },
  onExploreImage: (image) => {
    const img = document.querySelector<HTMLImageElement>("#explore-image");
    if (img) setImage(img, image);
  },
  onError: (error) => {
    const banner = document.querySelector<HTMLElement>("#study-status");
    if (banner) banner.textContent = `request failed, retrying on next change: ${error}`;
  },
});

boot(document.getElementById("app") as HTMLElement, app).catch((error) => {
  const root = document.getElementById("app");
  if (root) root.textContent = `failed to start: ${error}`;
});
