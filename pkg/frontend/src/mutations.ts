/**
 * Serialized mutation pipeline: at most one request in flight; while one
 * runs, newer submissions for the same control overwrite each other
 * (latest wins) instead of queueing a burst.
 */

export interface MutationHooks {
  onRevision(revision: number): void;
  onBusy?(busy: boolean): void;
  onError?(error: unknown): void;
}

export interface MutationQueue {
  submit(control: string, run: () => Promise<number>): void;
  inFlight(): boolean;
  /** Resolves once everything submitted so far has settled. */
  idle(): Promise<void>;
}

export function createMutationQueue(hooks: MutationHooks): MutationQueue {
  const pending = new Map<string, () => Promise<number>>();
  let running = false;
  let drainPromise: Promise<void> = Promise.resolve();

  async function drain(): Promise<void> {
    running = true;
    hooks.onBusy?.(true);
    try {
      while (pending.size > 0) {
        const next = pending.entries().next().value as
          | [string, () => Promise<number>]
          | undefined;
        if (!next) break;
        pending.delete(next[0]);
        try {
          hooks.onRevision(await next[1]());
        } catch (error) {
          hooks.onError?.(error);
        }
      }
    } finally {
      running = false;
      hooks.onBusy?.(false);
    }
  }

  return {
    submit(control, run) {
      pending.set(control, run);
      if (!running) drainPromise = drain();
    },
    inFlight: () => running,
    idle: () => drainPromise,
  };
}
