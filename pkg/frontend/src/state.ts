import { METHOD_COUNT, PARAM_COUNT, SESSION_LIMIT_SECONDS } from './types.js';

export interface ZoomState {
  scale: number;   // integer zoom so pixels stay true
  panX: number;    // pan offset in source pixels
  panY: number;
}

/**
 * Client-side state of the two-step selection flow for one image.
 *
 * Step 2 is reachable only once all seven methods have a pick; the state
 * machine enforces that independently of the server (which enforces it
 * again). Zoom state is shared by every tile so comparisons stay aligned.
 */
export class SelectionFlow {
  readonly imageId: string;
  method = 1;
  step: 1 | 2 = 1;
  private picks = new Map<number, number>();
  zoom: ZoomState = { scale: 1, panX: 0, panY: 0 };

  constructor(imageId: string) {
    this.imageId = imageId;
  }

  pick(method: number, param: number): void {
    if (method < 1 || method > METHOD_COUNT) {
      throw new Error(`method out of range: ${method}`);
    }
    if (param < 1 || param > PARAM_COUNT) {
      throw new Error(`parameter out of range: ${param}`);
    }
    if (this.step !== 1) {
      throw new Error('picks are fixed once step 2 begins');
    }
    this.picks.set(method, param);
  }

  pickFor(method: number): number | undefined {
    return this.picks.get(method);
  }

  get pickCount(): number {
    return this.picks.size;
  }

  get complete(): boolean {
    return this.picks.size === METHOD_COUNT;
  }

  nextUnpickedMethod(): number | null {
    for (let m = 1; m <= METHOD_COUNT; m++) {
      if (!this.picks.has(m)) return m;
    }
    return null;
  }

  /** Returns false (and stays in step 1) unless all seven picks exist. */
  enterStep2(): boolean {
    if (!this.complete) return false;
    this.step = 2;
    return true;
  }

  backToStep1(): void {
    this.step = 1;
  }

  zoomIn(): void {
    if (this.zoom.scale < 8) this.zoom = { ...this.zoom, scale: this.zoom.scale * 2 };
  }

  zoomOut(): void {
    if (this.zoom.scale > 1) {
      this.zoom = { ...this.zoom, scale: this.zoom.scale / 2 };
    } else {
      this.zoom = { scale: 1, panX: 0, panY: 0 };
    }
  }

  panBy(dx: number, dy: number): void {
    this.zoom = { ...this.zoom, panX: this.zoom.panX + dx, panY: this.zoom.panY + dy };
  }

  /** CSS transform shared verbatim by every tile (pixel-aligned comparison). */
  tileTransform(): string {
    const { scale, panX, panY } = this.zoom;
    return `scale(${scale}) translate(${-panX}px, ${-panY}px)`;
  }
}

/** Wall-clock session budget; injectable clock keeps tests deterministic. */
export class SessionTimer {
  private readonly startedAt: number;

  constructor(private readonly now: () => number = () => Date.now() / 1000) {
    this.startedAt = this.now();
  }

  elapsedSeconds(): number {
    return this.now() - this.startedAt;
  }

  remainingSeconds(): number {
    return Math.max(0, SESSION_LIMIT_SECONDS - this.elapsedSeconds());
  }

  get expired(): boolean {
    return this.remainingSeconds() <= 0;
  }
}
