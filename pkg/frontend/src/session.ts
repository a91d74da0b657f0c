// Session state for one operator tab: the principal, the token subset they
// have switched on (always within their configured grant), and the plan they
// are working.

export interface SessionContext {
  principal: string;
  granted: string[];
  selected: string[];
  activePlan: string | null;
}

export function newSession(principal: string, granted: string[]): SessionContext {
  return { principal, granted: [...granted], selected: [...granted], activePlan: null };
}

/** Toggle a token on or off; selections outside the grant are ignored. */
export function toggleToken(session: SessionContext, token: string): SessionContext {
  if (!session.granted.includes(token)) return session;
  const selected = session.selected.includes(token)
    ? session.selected.filter((t) => t !== token)
    : [...session.selected, token].sort();
  return { ...session, selected };
}

export function selectTokens(session: SessionContext, tokens: string[]): SessionContext {
  const selected = tokens.filter((t) => session.granted.includes(t)).sort();
  return { ...session, selected };
}
