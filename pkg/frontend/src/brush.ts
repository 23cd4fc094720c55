export type UvRect = [number, number, number, number];

/**
 * uv_rect for a square brush patch whose top-left corner sits at (u, v):
 * [u, v, u + texels/tTex, v + texels/tTex], nudged inside the unit square
 * when the brush would overhang the atlas border.
 */
export function brushRect(u: number, v: number, texels: number, tTex: number): UvRect {
  if (!(tTex > 0) || !Number.isInteger(tTex)) {
    throw new Error(`texture resolution must be a positive integer, got ${tTex}`);
  }
  if (!(texels > 0) || texels > tTex) {
    throw new Error(`brush spans ${texels} texels but the atlas has ${tTex}`);
  }
  const span = texels / tTex;
  const u0 = Math.min(Math.max(u, 0), 1 - span);
  const v0 = Math.min(Math.max(v, 0), 1 - span);
  return [u0, v0, u0 + span, v0 + span];
}

/** Canvas pixel -> uv; both run top-left to bottom-right, so this is a scale. */
export function canvasToUv(
  x: number,
  y: number,
  width: number,
  height: number,
): [number, number] {
  if (!(width > 0) || !(height > 0)) {
    throw new Error(`canvas must have positive dimensions, got ${width}x${height}`);
  }
  return [Math.min(Math.max(x / width, 0), 1), Math.min(Math.max(y / height, 0), 1)];
}
