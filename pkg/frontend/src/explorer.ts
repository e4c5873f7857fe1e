/**
 * The explorer controller: loads an episode (trace + its model), renders the
 * panels, and drives what-if probes. Probes are queued client-side so the
 * history order always matches the server's what-if log order, even when the
 * user clicks faster than the network answers.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderAll } from "./render.js";
import { applyWhatIf, buildViewModel, type ViewModel } from "./viewmodel.js";

export class Explorer {
  private vm: ViewModel | null = null;
  private queue: Promise<void> = Promise.resolve();

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  get viewModel(): ViewModel | null {
    return this.vm;
  }

  async loadEpisode(episodeId: string): Promise<void> {
    try {
      const transcript = await this.api.getTrace(episodeId);
      const model = await this.api.getEpisodeModel(episodeId).catch(() => null);
      this.vm = buildViewModel(episodeId, transcript, model?.doc ?? null);
      this.render(null);
    } catch (err) {
      this.vm = null;
      this.render(err instanceof ApiError ? `${err.kind}: ${err.message}` : String(err));
    }
  }

  /** Queue one probe; resolves when its response has been folded in. */
  probe(modifications: Record<string, unknown>): Promise<void> {
    const run = async (): Promise<void> => {
      if (!this.vm) return;
      try {
        const response = await this.api.whatIf(this.vm.episodeId, modifications);
        this.vm = applyWhatIf(this.vm, response);
        this.render(null);
      } catch (err) {
        this.render(err instanceof ApiError ? `${err.kind}: ${err.message}` : String(err));
      }
    };
    this.queue = this.queue.then(run);
    return this.queue;
  }

  private render(error: string | null): void {
    renderAll(this.root, this.vm, error, (mods) => void this.probe(mods));
  }
}

export const PANEL_TEMPLATE = `
  <div data-role="banner"></div>
  <header>
    <span data-role="verdict"></span>
    <span data-role="node-detail"></span>
  </header>
  <main>
    <section data-role="tree"></section>
    <aside>
      <section data-role="features"></section>
      <section data-role="history"></section>
    </aside>
    <section data-role="timeline"></section>
  </main>
`;

export function mountExplorer(root: HTMLElement, api: ApiClient): Explorer {
  root.innerHTML = PANEL_TEMPLATE;
  return new Explorer(root, api);
}
