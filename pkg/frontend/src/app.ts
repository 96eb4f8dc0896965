import { ServiceClient } from './api.js';
import { SessionTimer } from './state.js';
import { StudyApp } from './views.js';

function volunteerToken(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('volunteer');
  if (fromQuery) {
    localStorage.setItem('volunteer', fromQuery);
    return fromQuery;
  }
  const stored = localStorage.getItem('volunteer');
  if (stored) return stored;
  const typed = window.prompt('Volunteer id:') ?? '';
  localStorage.setItem('volunteer', typed);
  return typed;
}

const root = document.getElementById('app');
if (!root) throw new Error('missing #app container');

const client = new ServiceClient(volunteerToken(), (url, init) => fetch(url, init));
const timer = new SessionTimer();
const app = new StudyApp(root, client, timer);
window.setInterval(() => app.refreshTimer(), 1000);

app.start().catch((err) => {
  app.setStatus(`Could not start: ${err}`);
});
