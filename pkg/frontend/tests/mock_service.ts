// In-memory twin of the annotation backend, exposed through a FetchLike
// transport: same routes, same gating and idempotency semantics, so flow
// tests exercise the UI against the documented contract.

import type { FetchLike } from '../src/api.js';

export interface LoggedVote {
  image_id: string;
  volunteer: string;
  method: number;
  param: number;
}

export const INSTRUCTIONS = [
  'Strong edges should be preserved and blurry effects at significant edges '
  + 'are extremely undesired.',
  'The color of a smoothed image should be as close to the original image '
  + 'as possible.',
  'Under instructions 1 and 2, the smoother, the better.',
];

export class MockService {
  voteLog: LoggedVote[] = [];
  offline = false;
  requests: string[] = [];
  private picks = new Map<string, Map<number, number>>(); // "vol|t" -> m -> p

  constructor(
    private readonly images: string[],
    private readonly assignment: Record<string, string[]>, // volunteer -> images
  ) {}

  private key(volunteer: string, imageId: string): string {
    return `${volunteer}|${imageId}`;
  }

  private votesFor(volunteer: string, imageId: string): LoggedVote | undefined {
    return this.voteLog.find(
      (v) => v.volunteer === volunteer && v.image_id === imageId);
  }

  fetch: FetchLike = async (url, init) => {
    if (this.offline) throw new TypeError('network down');
    const method = init?.method ?? 'GET';
    this.requests.push(`${method} ${url}`);
    const auth = new Headers(init?.headers).get('Authorization') ?? '';
    const volunteer = auth.replace('Bearer ', '');
    const body = init?.body ? JSON.parse(String(init.body)) : {};
    const parts = url.split('/').filter(Boolean);

    const json = (status: number, doc: unknown) =>
      new Response(JSON.stringify(doc), { status });

    if (method === 'GET' && parts[0] === 'instructions') {
      return json(200, { instructions: INSTRUCTIONS });
    }
    if (method === 'GET' && parts[0] === 'assignment') {
      const mine = this.assignment[parts[1]] ?? [];
      return json(200, {
        volunteer: parts[1],
        pending: mine.filter((t) => !this.votesFor(parts[1], t)),
        completed: mine.filter((t) => this.votesFor(parts[1], t)),
      });
    }
    if (method === 'GET' && parts[0] === 'images' && parts[2] === 'grid') {
      const t = parts[1];
      const m = Number(parts[3]);
      if (!this.images.includes(t)) return json(404, { error: `unknown image ${t}` });
      if (m < 1 || m > 7) return json(400, { error: `method must be 1..7, got ${m}` });
      return json(200, {
        image_id: t,
        method: m,
        source: `/files/images/${t}/source.png`,
        candidates: Array.from({ length: 8 },
          (_, i) => `/files/images/${t}/m${m}_p${i + 1}.png`),
      });
    }
    if (method === 'POST' && parts[0] === 'picks') {
      const { image_id, method: m, param: p } = body;
      if (this.votesFor(volunteer, image_id)) {
        return json(409, { error: 'final vote already recorded' });
      }
      const k = this.key(volunteer, image_id);
      if (!this.picks.has(k)) this.picks.set(k, new Map());
      this.picks.get(k)!.set(m, p);
      return json(200, { picks_done: this.picks.get(k)!.size });
    }
    if (method === 'GET' && parts[0] === 'finalists') {
      const picks = this.picks.get(this.key(parts[1], parts[2]));
      if (!picks || picks.size < 7) {
        return json(409, { error: `step 2 requires all 7 step-1 picks` });
      }
      return json(200, {
        image_id: parts[2],
        source: `/files/images/${parts[2]}/source.png`,
        finalists: Array.from({ length: 7 }, (_, i) => ({
          method: i + 1,
          param: picks.get(i + 1),
          url: `/files/images/${parts[2]}/m${i + 1}_p${picks.get(i + 1)}.png`,
        })),
      });
    }
    if (method === 'POST' && parts[0] === 'votes') {
      const { image_id, method: m, param: p } = body;
      const existing = this.votesFor(volunteer, image_id);
      if (existing) {
        if (existing.method === m && existing.param === p) {
          return json(200, { image_id, volunteer, method: m, param: p, duplicate: true });
        }
        return json(409, { error: 'conflicting duplicate vote' });
      }
      const picks = this.picks.get(this.key(volunteer, image_id));
      if (!picks || picks.size < 7) {
        return json(409, { error: 'final vote requires all 7 step-1 picks first' });
      }
      if (picks.get(m) !== p) {
        return json(409, { error: `vote (${m}, ${p}) does not match the step-1 pick` });
      }
      this.voteLog.push({ image_id, volunteer, method: m, param: p });
      return json(200, { image_id, volunteer, method: m, param: p, duplicate: false });
    }
    return json(404, { error: `no such endpoint ${url}` });
  };
}
