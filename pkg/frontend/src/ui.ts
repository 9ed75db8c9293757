/**
 * DOM wiring: prompt rows, sampler and control panels, injection panel, and
 * the metrics readout. Browser-only; the logic it drives lives in session.ts
 * and is tested headlessly.
 */
import { AudioSink } from "./jitter.js";
import { SAMPLE_RATE } from "./protocol.js";
import { SessionController, Transport } from "./session.js";

export class WebSocketTransport implements Transport {
  constructor(private readonly ws: WebSocket) {
    ws.binaryType = "arraybuffer";
  }

  send(data: string | Uint8Array): void {
    this.ws.send(data);
  }

  close(): void {
    this.ws.close();
  }
}

export class WebAudioSink implements AudioSink {
  constructor(private readonly ctx: AudioContext) {}

  currentTime(): number {
    return this.ctx.currentTime;
  }

  schedule(samples: Float32Array, atTime: number): void {
    const frames = samples.length / 2;
    const buffer = this.ctx.createBuffer(2, frames, SAMPLE_RATE);
    const left = buffer.getChannelData(0);
    const right = buffer.getChannelData(1);
    for (let i = 0; i < frames; i++) {
      left[i] = samples[2 * i];
      right[i] = samples[2 * i + 1];
    }
    const source = this.ctx.createBufferSource();
    source.buffer = buffer;
    source.connect(this.ctx.destination);
    source.start(atTime);
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export function connect(url: string, root: HTMLElement): Promise<SessionController> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    ws.onerror = () => reject(new Error(`could not connect to ${url}`));
    ws.onopen = () => {
      const ctx = new AudioContext({ sampleRate: SAMPLE_RATE });
      const controller = new SessionController(
        new WebSocketTransport(ws),
        undefined,
        new WebAudioSink(ctx),
      );
      ws.onmessage = (ev) => {
        if (typeof ev.data === "string") controller.handleText(ev.data);
        else controller.handleBinary(new Uint8Array(ev.data as ArrayBuffer));
        render(controller, root);
      };
      buildPanels(controller, ctx, root);
      resolve(controller);
    };
  });
}

function buildPanels(controller: SessionController, ctx: AudioContext, root: HTMLElement): void {
  root.replaceChildren();

  const transport = el("div", { class: "panel" });
  const startBtn = el("button", {}, "start");
  const stopBtn = el("button", {}, "stop");
  startBtn.onclick = () => {
    void ctx.resume();
    controller.start();
  };
  stopBtn.onclick = () => controller.stop();
  transport.append(startBtn, stopBtn);

  const prompts = el("div", { class: "panel" });
  const rows: { text: HTMLInputElement; weight: HTMLInputElement }[] = [];
  const pushPrompts = () =>
    controller.setPrompts(
      rows
        .filter((r) => r.text.value.trim() !== "")
        .map((r) => ({ text: r.text.value, weight: Number(r.weight.value) })),
    );
  for (let i = 0; i < 2; i++) {
    const text = el("input", { type: "text", placeholder: `prompt ${i + 1}` });
    const weight = el("input", {
      type: "range",
      min: "0",
      max: "1",
      step: "0.01",
      value: i === 0 ? "1" : "0",
    });
    text.onchange = pushPrompts;
    weight.oninput = pushPrompts;
    rows.push({ text, weight });
    prompts.append(text, weight);
  }
  const transitionBtn = el("button", {}, "transition 1 → 2");
  transitionBtn.onclick = () => {
    transitionBtn.disabled = true;
    controller.startTransition(rows[0].text.value, rows[1].text.value, () => {
      transitionBtn.disabled = false;
    });
  };
  prompts.append(transitionBtn);

  const controls = el("div", { class: "panel" });
  const knob = (label: string, min: number, max: number, step: number, apply: (v: number) => void) => {
    const input = el("input", {
      type: "range",
      min: String(min),
      max: String(max),
      step: String(step),
    });
    input.oninput = () => apply(Number(input.value));
    controls.append(el("label", {}, label), input);
  };
  let strength = 2.0;
  knob("strength", 0, 20, 0.5, (v) => {
    strength = v;
  });
  knob("bpm", 40, 240, 1, (v) => controller.setControls({ bpm: v, strength }));
  knob("brightness", 100, 12000, 50, (v) => controller.setControls({ brightness: v, strength }));
  knob("density", 0, 16, 0.25, (v) => controller.setControls({ density: v, strength }));
  knob("key", 0, 11, 1, (v) => controller.setControls({ key: v, strength }));
  knob("temperature", 0.1, 2.0, 0.05, (v) => controller.setSampler({ temperature: v }));
  knob("cfg weight", 0, 10, 0.25, (v) => controller.setSampler({ cfg_weight: v }));

  const injection = el("div", { class: "panel" });
  const gain = el("input", { type: "range", min: "0", max: "1", step: "0.01", value: "0" });
  const mode = el("select");
  mode.append(el("option", { value: "free" }, "free"), el("option", { value: "looper" }, "looper"));
  const micBtn = el("button", {}, "enable mic");
  micBtn.onclick = () => void enableMic(controller, ctx);
  const applyInjection = () =>
    controller.setInjection(
      mode.value as "free" | "looper",
      Number(gain.value),
      mode.value === "looper" ? 120 : undefined,
      mode.value === "looper" ? 8 : undefined,
    );
  gain.oninput = applyInjection;
  mode.onchange = applyInjection;
  injection.append(mode, gain, micBtn);

  const metrics = el("pre", { class: "metrics", id: "metrics" });
  root.append(transport, prompts, controls, injection, metrics);
}

async function enableMic(controller: SessionController, ctx: AudioContext): Promise<void> {
  const media = await navigator.mediaDevices.getUserMedia({ audio: true });
  const source = ctx.createMediaStreamSource(media);
  const processor = ctx.createScriptProcessor(4096, 2, 2);
  processor.onaudioprocess = (ev) => {
    const left = ev.inputBuffer.getChannelData(0);
    const right = ev.inputBuffer.getChannelData(ev.inputBuffer.numberOfChannels > 1 ? 1 : 0);
    const interleaved = new Float32Array(left.length * 2);
    for (let i = 0; i < left.length; i++) {
      interleaved[2 * i] = left[i];
      interleaved[2 * i + 1] = right[i];
    }
    controller.injectMic(interleaved);
  };
  source.connect(processor);
  processor.connect(ctx.destination);
}

function render(controller: SessionController, root: HTMLElement): void {
  const box = root.querySelector("#metrics");
  if (!box) return;
  const m = controller.view.metrics;
  const delay = controller.view.lastActivationDelay;
  box.textContent = [
    m ? `chunk ${m.chunk_index}  rtf ${m.rtf_chunk.toFixed(2)}  cum ${m.rtf_cum.toFixed(2)}` : "no metrics yet",
    `underruns ${controller.view.underruns}`,
    delay !== null ? `activation delay ${delay.toFixed(2)} s` : "",
    controller.view.errors.length
      ? `last error: ${controller.view.errors[controller.view.errors.length - 1].reason}`
      : "",
  ]
    .filter(Boolean)
    .join("\n");
}
