"""Persona ingestion (JSONL) and a deterministic synthetic generator."""

from __future__ import annotations

import json
import random
import string
from pathlib import Path

from .domain import GROUP_ORDER, AgentGroup, ConfigError, Persona, SimulationConfig

_INTERESTS = [
    "local manufacturing jobs", "healthcare costs", "small business", "veterans' affairs",
    "public schools", "housing prices", "energy policy", "immigration", "tax reform",
    "climate", "gun rights", "union membership", "college tuition", "farm subsidies",
    "infrastructure", "policing", "tech regulation", "inflation", "social security",
]
_OCCUPATIONS = [
    "nurse", "truck driver", "retired teacher", "software developer", "farmer",
    "small business owner", "graduate student", "electrician", "accountant",
    "journalism student", "warehouse worker", "pastor", "real estate agent", "veteran",
]
_REGIONS = ["Ohio", "Arizona", "Georgia", "Michigan", "Pennsylvania", "Texas", "Wisconsin", "Nevada", "Florida"]

_STANCE_LINE = {
    AgentGroup.IO: "Presents as an enthusiastic grassroots supporter of the campaign.",
    AgentGroup.ALIGNED: "Generally supportive of the campaign's candidate and priorities.",
    AgentGroup.NOT_ALIGNED: "Generally skeptical of the campaign's candidate and priorities.",
}


def agent_names(n: int, rng: random.Random) -> list[str]:
    """``n`` unique names of the form "Agent <letter><digit>"."""
    letters = string.ascii_uppercase
    pool = [f"Agent {c}{d}" for c in letters for d in range(10)]
    if n > len(pool):
        pool += [f"Agent {c}{d}" for c in letters for d in range(10, 10 + (n // len(letters)) + 1)]
    rng.shuffle(pool)
    return pool[:n]


def generate_personas(config: SimulationConfig, seed: int | None = None) -> list[Persona]:
    rng = random.Random(f"personas:{config.seed if seed is None else seed}")
    names = agent_names(config.n_agents, rng)
    out: list[Persona] = []
    for agent in range(config.n_agents):
        group = config.group_of(agent)
        summary = (
            f"A {rng.choice(_OCCUPATIONS)} from {rng.choice(_REGIONS)} who posts mostly about "
            f"{rng.choice(_INTERESTS)} and {rng.choice(_INTERESTS)}. {_STANCE_LINE[group]}"
        )
        out.append(Persona(name=names[agent], profile_summary=summary, stance=group))
    return out


def load_personas(path: str | Path) -> list[Persona]:
    """Read one ``{name, profile_summary, group}`` object per line."""
    personas = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read personas {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            personas.append(Persona(obj["name"], obj["profile_summary"], AgentGroup(obj["group"])))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad persona record ({exc})") from exc
    return personas


def dump_personas(personas: list[Persona], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in personas:
            fh.write(json.dumps({"name": p.name, "profile_summary": p.profile_summary, "group": p.stance.value}) + "\n")


def arrange_personas(personas: list[Persona], config: SimulationConfig) -> list[Persona]:
    """Order personas into the IO / aligned / not-aligned id blocks, checking counts."""
    by_group = {g: [p for p in personas if p.stance is g] for g in GROUP_ORDER}
    expected = {AgentGroup.IO: config.n_io, AgentGroup.ALIGNED: config.n_aligned, AgentGroup.NOT_ALIGNED: config.n_not_aligned}
    for g in GROUP_ORDER:
        if len(by_group[g]) != expected[g]:
            raise ConfigError(
                f"persona/count mismatch for group {g.value}: {len(by_group[g])} personas, config expects {expected[g]}"
            )
    names = [p.name for p in personas]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate persona names: {dupes}")
    return [p for g in GROUP_ORDER for p in by_group[g]]
