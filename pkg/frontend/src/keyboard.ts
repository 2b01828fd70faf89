/**
 * Keyboard shortcuts for batch labeling:
 *   t        mark the focused boundary true (+1) and advance
 *   f        mark it false (-1) and advance
 *   arrows   move between cards
 *   Enter    submit when the batch is complete
 */

export interface KeyboardHandlers {
  answer(value: 1 | -1): void;
  move(step: number): void;
  submit(): void;
}

export function bindKeyboard(target: Document, handlers: KeyboardHandlers): () => void {
  const onKeyDown = (event: KeyboardEvent) => {
    const el = event.target as HTMLElement | null;
    if (el && (el.tagName === 'INPUT' || el.tagName === 'TEXTAREA')) return;
    switch (event.key) {
      case 't':
      case 'T':
        handlers.answer(1);
        event.preventDefault();
        break;
      case 'f':
      case 'F':
        handlers.answer(-1);
        event.preventDefault();
        break;
      case 'ArrowRight':
      case 'ArrowDown':
        handlers.move(1);
        event.preventDefault();
        break;
      case 'ArrowLeft':
      case 'ArrowUp':
        handlers.move(-1);
        event.preventDefault();
        break;
      case 'Enter':
        handlers.submit();
        break;
    }
  };
  target.addEventListener('keydown', onKeyDown as EventListener);
  return () => target.removeEventListener('keydown', onKeyDown as EventListener);
}
