/** App shell: the location hash is the only routing state.
 *
 * Navigating within one run (timeline clicks) re-targets the mounted
 * dashboard instead of remounting, so its poll loop and form state
 * carry over; any other transition disposes the old view.
 */

import { ApiClient } from "./api.js";
import { Route, parseHash } from "./router.js";
import { DashboardView } from "./views/dashboard.js";
import { RunListView } from "./views/runlist.js";
import { StatsView } from "./views/stats.js";

interface View {
  mount(): void;
  dispose(): void;
}

export interface AppOptions {
  root: HTMLElement;
  api: ApiClient;
  win: Window;
  pollIntervalMs?: number;
}

export interface AppController {
  currentRoute(): Route;
  stop(): void;
}

export function initApp(options: AppOptions): AppController {
  const { root, api, win } = options;
  const pollIntervalMs = options.pollIntervalMs ?? 1500;
  let view: View | null = null;
  let route: Route = { name: "list" };

  const apply = (): void => {
    const next = parseHash(win.location.hash);
    if (
      next.name === "run" &&
      route.name === "run" &&
      next.runId === route.runId &&
      view instanceof DashboardView
    ) {
      route = next;
      view.setIteration(next.iteration);
      return;
    }
    view?.dispose();
    route = next;
    if (next.name === "run") {
      const dashboard = new DashboardView(
        root,
        api,
        win,
        next.runId,
        next.iteration,
        pollIntervalMs,
      );
      view = dashboard;
    } else if (next.name === "stats") {
      view = new StatsView(root, api, win, next.runId);
    } else {
      view = new RunListView(root, api, pollIntervalMs * 2);
    }
    view.mount();
  };

  const onHashChange = (): void => apply();
  win.addEventListener("hashchange", onHashChange);
  apply();

  return {
    currentRoute: () => route,
    stop: () => {
      win.removeEventListener("hashchange", onHashChange);
      view?.dispose();
      view = null;
    },
  };
}
