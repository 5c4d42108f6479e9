/** Run list route: every run the service knows, newest activity first. */

import { ApiClient, RunSnapshot } from "../api.js";
import { hashFor } from "../router.js";
import { PollController, startPoll } from "../poll.js";
import { clear, el, statusBadge } from "./helpers.js";

export class RunListView {
  private poll: PollController | null = null;
  private readonly banner = el("div", {
    className: "banner banner-offline hidden",
    text: "connection lost; retrying",
  });
  private readonly body = el("div");

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly pollIntervalMs = 3000,
  ) {}

  mount(): void {
    clear(this.root);
    this.root.append(
      el("header", {}, [el("h1", { text: "phenocycle runs" })]),
      this.banner,
      this.body,
    );
    this.poll = startPoll(
      async () => this.render(await this.api.listRuns()),
      (offline) => this.banner.classList.toggle("hidden", !offline),
      this.pollIntervalMs,
    );
  }

  dispose(): void {
    this.poll?.stop();
  }

  private render(runs: RunSnapshot[]): void {
    clear(this.body);
    if (runs.length === 0) {
      this.body.append(
        el("p", {
          className: "empty",
          text: "no runs yet; create one with the CLI or POST /api/runs",
        }),
      );
      return;
    }
    const rows = runs.map((run) => {
      const cells = [
        el("td", {}, [
          el("a", {
            text: run.run_id,
            attrs: { href: hashFor({ name: "run", runId: run.run_id, iteration: null }) },
          }),
        ]),
        el("td", {}, [statusBadge(run.status)]),
        el("td", { text: String(run.n_iterations) }),
        el("td", { text: run.subset.included.join(", ") }),
        el("td", {}, run.has_final_stats
          ? [el("a", { text: "stats", attrs: { href: hashFor({ name: "stats", runId: run.run_id }) } })]
          : []),
      ];
      return el("tr", {}, cells);
    });
    this.body.append(
      el("table", { className: "run-table" }, [
        el("thead", {}, [
          el("tr", {}, [
            el("th", { text: "run" }),
            el("th", { text: "status" }),
            el("th", { text: "iterations" }),
            el("th", { text: "feature subset" }),
            el("th", { text: "report" }),
          ]),
        ]),
        el("tbody", {}, rows),
      ]),
    );
  }
}
