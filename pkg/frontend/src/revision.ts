/**
 * Monotonic revision gate: frames may arrive out of order (live channel
 * pushes race with explicit fetches), and the view must only ever move
 * forward.
 */
export interface RevisionGate {
  current(): number;
  /** True when `revision` advances the gate and its frame should display. */
  accept(revision: number): boolean;
}

export function createRevisionGate(start = -1): RevisionGate {
  let current = start;
  return {
    current: () => current,
    accept(revision: number): boolean {
      if (!Number.isInteger(revision) || revision <= current) return false;
      current = revision;
      return true;
    },
  };
}
