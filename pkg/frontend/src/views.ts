import { ServiceClient, ServiceRejection, ServiceUnavailable } from './api.js';
import { SelectionFlow, SessionTimer } from './state.js';
import { Finalists, Grid, METHOD_COUNT } from './types.js';

const SESSION_RULE =
  'Session limit reached: a single work session of up to 60 minutes is ' +
  'allowed per day. Please continue tomorrow.';

/**
 * The two-step selection interface.
 *
 * Step 1 shows the source image in the top left corner plus the eight
 * candidates of the current method in fixed parameter order; clicking (or
 * pressing 1-8) picks one. Step 2 shows the seven step-1 picks side by side
 * in fixed method order; one click submits the final vote. Zoom and pan
 * apply to every tile identically so volunteers compare true pixels.
 */
export class StudyApp {
  private flow: SelectionFlow | null = null;
  private pending: string[] = [];
  private keyHandler: (e: KeyboardEvent) => void;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ServiceClient,
    private readonly timer: SessionTimer,
    private readonly doc: Document = document,
  ) {
    this.keyHandler = (e) => this.onKey(e);
    this.doc.addEventListener('keydown', this.keyHandler);
  }

  async start(): Promise<void> {
    const instructions = await this.client.instructions();
    this.showInstructions(instructions, true);
    const assignment = await this.client.assignment();
    this.pending = [...assignment.pending];
    await this.nextImage();
  }

  async nextImage(): Promise<void> {
    const imageId = this.pending.shift();
    if (imageId === undefined) {
      this.renderDone();
      return;
    }
    this.flow = new SelectionFlow(imageId);
    await this.showMethod(1);
  }

  async showMethod(method: number): Promise<void> {
    if (!this.flow) return;
    this.flow.method = method;
    try {
      const grid = await this.client.grid(this.flow.imageId, method);
      this.renderStep1(grid);
    } catch (err) {
      this.renderFetchFailure(err, () => this.showMethod(method));
    }
  }

  async tryEnterStep2(): Promise<void> {
    if (!this.flow) return;
    if (!this.flow.enterStep2()) {
      this.setStatus(
        `Pick a result for all ${METHOD_COUNT} methods first ` +
        `(${this.flow.pickCount}/${METHOD_COUNT} done).`);
      return;
    }
    try {
      const finalists = await this.client.finalists(this.flow.imageId);
      this.renderStep2(finalists);
    } catch (err) {
      this.flow.backToStep1();
      this.renderFetchFailure(err, () => this.tryEnterStep2());
    }
  }

  async submitVote(method: number, param: number): Promise<void> {
    if (!this.flow) return;
    if (this.timer.expired) {
      this.setStatus(SESSION_RULE);
      return;
    }
    try {
      const ack = await this.client.postVote(this.flow.imageId, method, param);
      this.setStatus(ack.duplicate
        ? `Vote for ${ack.image_id} was already recorded.`
        : `Recorded: method ${ack.method}, setting ${ack.param}.`);
      await this.nextImage();
    } catch (err) {
      if (err instanceof ServiceRejection) {
        this.setStatus(err.message); // surfaced verbatim
      } else {
        this.renderFetchFailure(err, () => this.submitVote(method, param));
      }
    }
  }

  // -- rendering ----------------------------------------------------------

  private clear(): HTMLElement {
    // view renders must not dismiss an open instructions overlay
    const overlays = Array.from(this.root.querySelectorAll(':scope > .instructions'));
    this.root.innerHTML = '';
    for (const overlay of overlays) this.root.append(overlay);
    const bar = this.el('div', 'statusbar');
    bar.dataset.testid = 'status';
    const timerEl = this.el('span', 'timer');
    timerEl.dataset.testid = 'timer';
    this.refreshTimer(timerEl);
    const help = this.el('button', 'help');
    help.textContent = 'Instructions';
    help.addEventListener('click', () => {
      void this.client.instructions().then((i) => this.showInstructions(i, false));
    });
    const header = this.el('header', 'header');
    header.append(timerEl, help);
    this.root.append(header, bar);
    const main = this.el('main', 'main');
    this.root.append(main);
    return main;
  }

  renderStep1(grid: Grid): void {
    if (!this.flow) return;
    const main = this.clear();
    const title = this.el('h2');
    title.textContent =
      `Image ${grid.image_id} — step 1: best result of method ${grid.method}`;
    main.append(title);

    main.append(this.methodTabs());

    const tiles = this.el('div', 'grid');
    tiles.dataset.testid = 'step1-grid';
    tiles.append(this.tile(grid.source, 'Source', 'source-tile'));
    grid.candidates.forEach((url, idx) => {
      const p = idx + 1;
      const t = this.tile(url, `p${p}`, 'candidate');
      t.dataset.param = String(p);
      if (this.flow!.pickFor(grid.method) === p) t.classList.add('selected');
      t.addEventListener('click', () => { void this.pickCandidate(p); });
      tiles.append(t);
    });
    main.append(tiles);

    const next = this.el('button', 'next-method');
    next.dataset.testid = 'next-method';
    const picked = this.flow.pickFor(grid.method) !== undefined;
    (next as HTMLButtonElement).disabled = !picked;
    next.textContent = this.flow.complete
      ? 'All methods picked — compare finalists'
      : 'Next method';
    next.addEventListener('click', () => { void this.advance(); });
    main.append(next, this.zoomControls());
    this.applyZoom();
  }

  renderStep2(finalists: Finalists): void {
    const main = this.clear();
    const title = this.el('h2');
    title.textContent =
      `Image ${finalists.image_id} — step 2: best of the ${METHOD_COUNT} methods`;
    main.append(title);

    const row = this.el('div', 'finalists');
    row.dataset.testid = 'step2-row';
    row.append(this.tile(finalists.source, 'Source', 'source-tile'));
    for (const f of finalists.finalists) {
      const t = this.tile(f.url, `method ${f.method} (p${f.param})`, 'finalist');
      t.dataset.method = String(f.method);
      t.dataset.param = String(f.param);
      t.addEventListener('click', () => { void this.submitVote(f.method, f.param); });
      row.append(t);
    }
    main.append(row);

    const back = this.el('button', 'back');
    back.dataset.testid = 'back-to-step1';
    back.textContent = 'Back to method picks';
    back.addEventListener('click', () => {
      this.flow?.backToStep1();
      void this.showMethod(this.flow?.method ?? 1);
    });
    main.append(back, this.zoomControls());
    this.applyZoom();
  }

  renderDone(): void {
    const main = this.clear();
    const msg = this.el('h2');
    msg.dataset.testid = 'done';
    msg.textContent = 'All assigned images are complete. Thank you!';
    main.append(msg);
  }

  renderFetchFailure(err: unknown, retry: () => Promise<void>): void {
    if (err instanceof ServiceRejection) {
      this.setStatus(err.message);
      return;
    }
    if (!(err instanceof ServiceUnavailable)) throw err;
    this.setStatus('Service unreachable. Picks are saved locally; retry when '
      + 'the connection is back.');
    const btn = this.el('button', 'retry');
    btn.dataset.testid = 'retry';
    btn.textContent = 'Retry';
    btn.addEventListener('click', () => { void retry(); });
    this.statusEl()?.append(btn);
  }

  private showInstructions(instructions: string[], firstLaunch: boolean): void {
    const overlay = this.el('div', 'instructions');
    overlay.dataset.testid = 'instructions';
    const list = this.el('ol');
    for (const text of instructions) {
      const item = this.el('li');
      item.textContent = text;
      list.append(item);
    }
    const close = this.el('button', 'close');
    close.textContent = firstLaunch ? 'Start' : 'Close';
    close.addEventListener('click', () => overlay.remove());
    overlay.append(list, close);
    this.root.append(overlay);
  }

  // -- interaction --------------------------------------------------------

  private async pickCandidate(param: number): Promise<void> {
    if (!this.flow || this.flow.step !== 1) return;
    const method = this.flow.method;
    this.flow.pick(method, param);
    for (const t of this.root.querySelectorAll('.candidate')) {
      t.classList.toggle('selected', t.getAttribute('data-param') === String(param));
    }
    const next = this.root.querySelector('.next-method') as HTMLButtonElement | null;
    if (next) next.disabled = false;
    try {
      await this.client.postPick(this.flow.imageId, method, param);
    } catch (err) {
      if (err instanceof ServiceRejection) this.setStatus(err.message);
      else throw err;
    }
  }

  private async advance(): Promise<void> {
    if (!this.flow) return;
    const next = this.flow.nextUnpickedMethod();
    if (next !== null && this.flow.pickFor(this.flow.method) === undefined) {
      this.setStatus('Pick one result first (click a tile or press 1-8).');
      return;
    }
    if (this.flow.complete) {
      await this.tryEnterStep2();
    } else if (next !== null) {
      await this.showMethod(next);
    }
  }

  private onKey(e: KeyboardEvent): void {
    if (!this.flow) return;
    if (this.flow.step === 1 && /^[1-8]$/.test(e.key)) {
      void this.pickCandidate(Number(e.key));
    } else if (e.key === '+' || e.key === '=') {
      this.flow.zoomIn();
      this.applyZoom();
    } else if (e.key === '-') {
      this.flow.zoomOut();
      this.applyZoom();
    } else if (e.key.startsWith('Arrow')) {
      const step = 8;
      const d = {
        ArrowLeft: [-step, 0], ArrowRight: [step, 0],
        ArrowUp: [0, -step], ArrowDown: [0, step],
      }[e.key];
      if (d && this.flow.zoom.scale > 1) {
        this.flow.panBy(d[0], d[1]);
        this.applyZoom();
      }
    }
  }

  // -- helpers ------------------------------------------------------------

  private el(tag: string, cls?: string): HTMLElement {
    const node = this.doc.createElement(tag);
    if (cls) node.className = cls;
    return node;
  }

  private tile(url: string, label: string, cls: string): HTMLElement {
    const wrap = this.el('figure', `tile ${cls}`);
    const img = this.el('img') as HTMLImageElement;
    img.src = url;
    img.draggable = false;
    const cap = this.el('figcaption');
    cap.textContent = label;
    wrap.append(img, cap);
    return wrap;
  }

  private methodTabs(): HTMLElement {
    const tabs = this.el('nav', 'tabs');
    for (let m = 1; m <= METHOD_COUNT; m++) {
      const tab = this.el('button', 'tab');
      tab.dataset.method = String(m);
      const pick = this.flow?.pickFor(m);
      tab.textContent = pick === undefined ? `m${m}` : `m${m} (p${pick})`;
      if (m === this.flow?.method) tab.classList.add('active');
      tab.addEventListener('click', () => { void this.showMethod(m); });
      tabs.append(tab);
    }
    return tabs;
  }

  private zoomControls(): HTMLElement {
    const bar = this.el('div', 'zoombar');
    const zin = this.el('button', 'zoom-in');
    zin.textContent = '+';
    zin.addEventListener('click', () => { this.flow?.zoomIn(); this.applyZoom(); });
    const zout = this.el('button', 'zoom-out');
    zout.textContent = '-';
    zout.addEventListener('click', () => { this.flow?.zoomOut(); this.applyZoom(); });
    bar.append(zout, zin);
    return bar;
  }

  /** One shared transform string so every tile shows the same crop. */
  applyZoom(): void {
    if (!this.flow) return;
    const transform = this.flow.tileTransform();
    for (const img of this.root.querySelectorAll('.tile img')) {
      (img as HTMLElement).style.transform = transform;
    }
  }

  private statusEl(): HTMLElement | null {
    return this.root.querySelector('.statusbar');
  }

  setStatus(message: string): void {
    const bar = this.statusEl();
    if (bar) {
      bar.textContent = message;
    }
  }

  refreshTimer(target?: HTMLElement): void {
    const el = target ?? (this.root.querySelector('.timer') as HTMLElement | null);
    if (!el) return;
    const left = Math.floor(this.timer.remainingSeconds());
    const mm = String(Math.floor(left / 60)).padStart(2, '0');
    const ss = String(left % 60).padStart(2, '0');
    el.textContent = this.timer.expired ? 'session over' : `${mm}:${ss} left`;
    if (this.timer.expired) this.setStatus(SESSION_RULE);
  }

  dispose(): void {
    this.doc.removeEventListener('keydown', this.keyHandler);
  }
}

export { SESSION_RULE };
