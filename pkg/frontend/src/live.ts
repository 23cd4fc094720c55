/**
 * Live frame channel.  The service pushes binary messages: a 4-byte
 * little-endian revision, followed by PNG bytes.  A bare 4-byte message is
 * a keepalive.  On connection loss the channel retries forever with a
 * fixed delay and reports status so the app can show a banner.
 */

export interface LiveFrame {
  revision: number;
  png: Uint8Array;
}

export interface LiveHandlers {
  onFrame(frame: LiveFrame): void;
  onStatus?(connected: boolean): void;
}

export interface LiveChannel {
  close(): void;
  connected(): boolean;
}

type SocketFactory = (url: string) => WebSocket;

export function decodeLiveMessage(data: ArrayBuffer): LiveFrame | null {
  if (data.byteLength < 4) {
    throw new Error(`live message too short (${data.byteLength} bytes)`);
  }
  const revision = new DataView(data).getUint32(0, true);
  if (data.byteLength === 4) return null; // keepalive
  return { revision, png: new Uint8Array(data, 4) };
}

export function connectLive(
  url: string,
  handlers: LiveHandlers,
  options: { retryMs?: number; socketFactory?: SocketFactory } = {},
): LiveChannel {
  const retryMs = options.retryMs ?? 1000;
  const makeSocket = options.socketFactory ?? ((u: string) => new WebSocket(u));
  let socket: WebSocket | null = null;
  let closed = false;
  let up = false;
  let retryTimer: ReturnType<typeof setTimeout> | null = null;

  const setStatus = (connected: boolean) => {
    if (up !== connected) {
      up = connected;
      handlers.onStatus?.(connected);
    }
  };

  const open = () => {
    if (closed) return;
    socket = makeSocket(url);
    socket.binaryType = "arraybuffer";
    socket.onopen = () => setStatus(true);
    socket.onmessage = (event: MessageEvent) => {
      if (!(event.data instanceof ArrayBuffer)) return;
      const frame = decodeLiveMessage(event.data);
      if (frame) handlers.onFrame(frame);
    };
    socket.onclose = () => {
      setStatus(false);
      if (!closed) retryTimer = setTimeout(open, retryMs);
    };
    socket.onerror = () => {
      socket?.close();
    };
  };
  open();

  return {
    close() {
      closed = true;
      if (retryTimer !== null) clearTimeout(retryTimer);
      socket?.close();
      setStatus(false);
    },
    connected: () => up,
  };
}
