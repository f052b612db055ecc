#!/usr/bin/env python3
"""Overlap batch preparation with training through the bounded circular feed.

A background producer keeps the ring stocked while the trainer consumes one
batch per charged epoch; the producer can never overwrite unconsumed slots
and the consumer drains leftovers before seeing end-of-stream.
"""

import threading

from frpkernel.harness.buffer import BufferClosed, CircularBuffer, EndOfStream
from frpkernel.model_select import ModelSpace, ProxyScorer, Trainer, select

feed = CircularBuffer(capacity=4)
produced_log = []


def producer():
    batch = 0
    while True:
        try:
            feed.produce(batch)
        except BufferClosed:
            return
        produced_log.append(batch)
        batch += 1


worker = threading.Thread(target=producer, daemon=True)
worker.start()

space = ModelSpace((4, 4, 4), seed=2)
trainer = Trainer(space, noise_sigma=0.05, data_source=feed.consume)
result = select(space, ProxyScorer(space, rho=0.9, sigma=0.1), trainer,
                budget=120.0, seed=2)
feed.close()
worker.join(timeout=5.0)

print(f"training charged {result.epochs_charged} epochs "
      f"and consumed {trainer.batches_consumed} batches (one per epoch)")
print(f"ring capacity 4: produced {feed.total_produced}, "
      f"consumed {feed.total_consumed}, "
      f"{feed.total_produced - feed.total_consumed} left unconsumed at close")

# the drain-then-stop contract, shown directly
ring = CircularBuffer(capacity=3)
for item in ("a", "b"):
    ring.produce(item)
ring.close()
drained = []
while True:
    try:
        drained.append(ring.consume())
    except EndOfStream:
        break
print(f"after close, the consumer drained {drained} and then saw end-of-stream")
