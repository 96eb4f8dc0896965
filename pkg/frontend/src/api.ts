import { Assignment, Finalists, Grid, VoteAck } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceUnavailable extends Error {}

export class ServiceRejection extends Error {
  constructor(readonly status: number, message: string,
              readonly retryAfter: number | null = null) {
    super(message);
  }
}

interface BufferedPick {
  imageId: string;
  method: number;
  param: number;
}

/**
 * Client for the annotation backend. Step-1 picks are buffered locally when
 * the network drops and flushed before anything that depends on them, so a
 * flaky connection never loses work and never fabricates votes.
 */
export class ServiceClient {
  private pickBuffer: BufferedPick[] = [];

  constructor(
    private readonly volunteer: string,
    private readonly fetchImpl: FetchLike,
    private readonly baseUrl = '',
  ) {}

  get bufferedPickCount(): number {
    return this.pickBuffer.length;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers: {
          'Authorization': `Bearer ${this.volunteer}`,
          'Content-Type': 'application/json',
        },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ServiceUnavailable(String(err));
    }
    const doc = await resp.json();
    if (!resp.ok) {
      const retry = resp.headers.get('Retry-After');
      throw new ServiceRejection(resp.status, doc.error ?? resp.statusText,
                                 retry === null ? null : Number(retry));
    }
    return doc as T;
  }

  assignment(): Promise<Assignment> {
    return this.request('GET', `/assignment/${this.volunteer}`);
  }

  grid(imageId: string, method: number): Promise<Grid> {
    return this.request('GET', `/images/${imageId}/grid/${method}`);
  }

  async instructions(): Promise<string[]> {
    const doc = await this.request<{ instructions: string[] }>('GET', '/instructions');
    return doc.instructions;
  }

  /** Send one step-1 pick; buffer it if the service is unreachable. */
  async postPick(imageId: string, method: number, param: number): Promise<void> {
    const pick = { imageId, method, param };
    try {
      await this.flushPicks();
      await this.request('POST', '/picks', {
        image_id: imageId, method, param,
      });
    } catch (err) {
      if (err instanceof ServiceUnavailable) {
        this.buffer(pick);
        return;
      }
      throw err;
    }
  }

  private buffer(pick: BufferedPick): void {
    this.pickBuffer = this.pickBuffer.filter(
      (p) => !(p.imageId === pick.imageId && p.method === pick.method));
    this.pickBuffer.push(pick);
  }

  /** Replay buffered picks in order; throws ServiceUnavailable if still offline. */
  async flushPicks(): Promise<void> {
    while (this.pickBuffer.length > 0) {
      const pick = this.pickBuffer[0];
      await this.request('POST', '/picks', {
        image_id: pick.imageId, method: pick.method, param: pick.param,
      });
      this.pickBuffer.shift();
    }
  }

  /** Finalists require every step-1 pick to be on the server. */
  async finalists(imageId: string): Promise<Finalists> {
    await this.flushPicks();
    return this.request('GET', `/finalists/${this.volunteer}/${imageId}`);
  }

  /** The final vote; buffered picks flush first. Safe to retry (idempotent). */
  async postVote(imageId: string, method: number, param: number): Promise<VoteAck> {
    await this.flushPicks();
    return this.request('POST', '/votes', {
      image_id: imageId, method, param,
    });
  }

  progress(): Promise<{ votes: number; completion: number }> {
    return this.request('GET', '/progress');
  }
}
