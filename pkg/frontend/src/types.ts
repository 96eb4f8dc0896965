export interface Assignment {
  volunteer: string;
  pending: string[];
  completed: string[];
}

export interface Grid {
  image_id: string;
  method: number;
  source: string;
  candidates: string[]; // one URL per parameter setting, fixed order 1..8
}

export interface Finalist {
  method: number;
  param: number;
  url: string;
}

export interface Finalists {
  image_id: string;
  source: string;
  finalists: Finalist[];
}

export interface VoteAck {
  image_id: string;
  volunteer: string;
  method: number;
  param: number;
  duplicate: boolean;
}

export const METHOD_COUNT = 7;
export const PARAM_COUNT = 8;
export const SESSION_LIMIT_SECONDS = 60 * 60;
