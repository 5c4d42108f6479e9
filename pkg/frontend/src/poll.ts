/** The single poll loop behind an open run view.
 *
 * One timer chain per controller; errors flip the offline flag and
 * back off up to a cap, successes restore the base cadence. `kick()`
 * runs a tick immediately (used right after a decision).
 */

export interface PollController {
  stop(): void;
  kick(): void;
}

export function startPoll(
  tick: () => Promise<void>,
  onOffline: (offline: boolean) => void,
  intervalMs = 1500,
): PollController {
  let active = true;
  let delay = intervalMs;
  let timer: ReturnType<typeof setTimeout> | null = null;
  let running = false;

  const runOnce = async (): Promise<void> => {
    if (!active || running) return;
    running = true;
    try {
      await tick();
      onOffline(false);
      delay = intervalMs;
    } catch {
      onOffline(true);
      delay = Math.min(delay * 2, 10_000);
    } finally {
      running = false;
      if (active) timer = setTimeout(runOnce, delay);
    }
  };

  timer = setTimeout(runOnce, 0);
  return {
    stop(): void {
      active = false;
      if (timer !== null) clearTimeout(timer);
    },
    kick(): void {
      if (!active || running) return;
      if (timer !== null) clearTimeout(timer);
      void runOnce();
    },
  };
}
