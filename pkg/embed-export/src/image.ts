/** In-memory raster plus resampling helpers. */

export interface Raster {
  width: number;
  height: number;
  channels: number;
  /** Row-major, channel-interleaved, values in [0, 1]. */
  data: Float64Array;
}

export function makeRaster(width: number, height: number, channels: number): Raster {
  return { width, height, channels, data: new Float64Array(width * height * channels) };
}

/** Bilinear resample with center-aligned pixel coordinates. */
export function resizeBilinear(src: Raster, width: number, height: number): Raster {
  const out = makeRaster(width, height, src.channels);
  const { channels } = src;
  for (let y = 0; y < height; y++) {
    const sy = Math.min(Math.max(((y + 0.5) * src.height) / height - 0.5, 0), src.height - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, src.height - 1);
    const wy = sy - y0;
    for (let x = 0; x < width; x++) {
      const sx = Math.min(Math.max(((x + 0.5) * src.width) / width - 0.5, 0), src.width - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, src.width - 1);
      const wx = sx - x0;
      for (let c = 0; c < channels; c++) {
        const p00 = src.data[(y0 * src.width + x0) * channels + c];
        const p01 = src.data[(y0 * src.width + x1) * channels + c];
        const p10 = src.data[(y1 * src.width + x0) * channels + c];
        const p11 = src.data[(y1 * src.width + x1) * channels + c];
        out.data[(y * width + x) * channels + c] =
          (1 - wy) * ((1 - wx) * p00 + wx * p01) + wy * ((1 - wx) * p10 + wx * p11);
      }
    }
  }
  return out;
}

/** Upgrade grayscale to RGB so every consumer sees three channels. */
export function toRgb(src: Raster): Raster {
  if (src.channels === 3) return src;
  const out = makeRaster(src.width, src.height, 3);
  for (let i = 0; i < src.width * src.height; i++) {
    const v = src.data[i * src.channels];
    out.data[i * 3] = v;
    out.data[i * 3 + 1] = v;
    out.data[i * 3 + 2] = v;
  }
  return out;
}
