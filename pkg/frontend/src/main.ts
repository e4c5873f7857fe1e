/** Browser entry point: base-URL + episode-id inputs wired to the explorer. */

import { ApiClient } from "./api.js";
import { mountExplorer } from "./explorer.js";

function start(): void {
  const app = document.getElementById("app");
  const controls = document.getElementById("controls");
  if (!app || !controls) return;

  controls.innerHTML = `
    <input id="base-url" value="http://127.0.0.1:8000" size="28" />
    <input id="episode-id" placeholder="episode id" size="36" />
    <button id="load">Load episode</button>
  `;
  const baseUrl = controls.querySelector<HTMLInputElement>("#base-url")!;
  const episodeId = controls.querySelector<HTMLInputElement>("#episode-id")!;
  const load = controls.querySelector<HTMLButtonElement>("#load")!;

  load.addEventListener("click", () => {
    const explorer = mountExplorer(app, new ApiClient(baseUrl.value.trim()));
    void explorer.loadEpisode(episodeId.value.trim());
  });
}

document.addEventListener("DOMContentLoaded", start);
