"""
Driving in the simulation yourself
==================================

The bridge pushes the running simulation over a websocket at 20 Hz and
accepts throttle/brake frames for one ego vehicle. A session is two
five-minute scenarios (20% then 80% autonomous vehicles) followed by a
three-question survey; see docs/protocol.md for the frame formats and
frontend/ for the browser client.

This script starts the server. Then either:

  * open the browser client (see frontend/README.md), or
  * talk to it from any websocket library, e.g.:

        import asyncio, json, websockets

        async def drive():
            async with websockets.connect("ws://127.0.0.1:8765") as ws:
                print(await ws.recv())   # hello
                print(await ws.recv())   # config
                await ws.send(json.dumps({"type": "control",
                                          "throttle": 1.0, "brake": 0.0}))
                while True:
                    print(json.loads(await ws.recv())["sim_clock"])

        asyncio.run(drive())
"""

import asyncio

from roundsim import nn
from roundsim.bridge import BridgeConfig, SessionStore, serve
from roundsim.config import ScenarioConfig

config = ScenarioConfig()
policy = nn.load_checkpoint("runs/roundabout/policy.ckpt")
bridge = BridgeConfig(host="127.0.0.1", port=8765)
store = SessionStore(path="survey_responses.jsonl")

print(f"listening on ws://{bridge.host}:{bridge.port} — Ctrl-C to stop")
try:
    asyncio.run(serve(config, policy, bridge, store=store))
except KeyboardInterrupt:
    print(f"\n{len(store.records)} survey responses recorded")
