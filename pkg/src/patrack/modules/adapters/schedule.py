"""
PATrack Adapters - Placement schedule.

Which layers carry CEA and which carry MDA. Every preset resolves to an
explicit per-layer map.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping

from patrack.exceptions import ConfigurationException
from patrack.modules.adapters.schemas import AdapterKind, PlacementSchedule

DEFAULT_DEPTH = 12
DEFAULT_CEA_LAYERS = (4, 7, 10)


def cea_layer_schedule(num_layers: int, cea_layers: Iterable[int]) -> PlacementSchedule:
    cea = set(cea_layers)
    bad = sorted(layer for layer in cea if not 1 <= layer <= num_layers)
    if bad:
        raise ConfigurationException(
            f"CEA layers {bad} fall outside 1..{num_layers}", key="adapters.schedule"
        )
    return PlacementSchedule(
        tuple(AdapterKind.CEA if layer in cea else AdapterKind.MDA for layer in range(1, num_layers + 1))
    )


def even_schedule(num_layers: int, every: int) -> PlacementSchedule:
    """CEA at every `every`-th layer."""
    if every < 1:
        raise ConfigurationException("schedule spacing must be >= 1", key="adapters.schedule")
    return cea_layer_schedule(num_layers, range(every, num_layers + 1, every))


def make_schedule(
    num_layers: int, override: Mapping[int, AdapterKind | str] | None = None
) -> PlacementSchedule:
    """Default CEA-at-{4,7,10} map for 12 layers; any other depth needs an override."""
    if override is None:
        if num_layers != DEFAULT_DEPTH:
            raise ConfigurationException(
                f"no default placement for {num_layers} layers; give an explicit schedule",
                key="adapters.schedule_override",
            )
        return cea_layer_schedule(num_layers, DEFAULT_CEA_LAYERS)

    layers = {int(k) for k in override}
    if layers != set(range(1, num_layers + 1)):
        missing = sorted(set(range(1, num_layers + 1)) - layers)
        extra = sorted(layers - set(range(1, num_layers + 1)))
        raise ConfigurationException(
            f"schedule override must cover layers 1..{num_layers} (missing {missing}, extra {extra})",
            key="adapters.schedule_override",
        )
    try:
        kinds = tuple(AdapterKind(override[k]) for k in sorted(override, key=int))
    except ValueError as exc:
        raise ConfigurationException(str(exc), key="adapters.schedule_override") from exc
    return PlacementSchedule(kinds)


def preset_schedule(name: str, num_layers: int) -> PlacementSchedule:
    if name == "paper":
        return make_schedule(num_layers)
    if name == "none":
        return cea_layer_schedule(num_layers, ())
    if name.startswith("even-"):
        return even_schedule(num_layers, int(name.split("-", 1)[1]))
    raise ConfigurationException(f"unknown schedule preset '{name}'", key="adapters.schedule")


def resolve_schedule(
    num_layers: int,
    preset: str = "paper",
    override: Mapping[str, str] | None = None,
    use_cea: bool = True,
) -> PlacementSchedule:
    """Schedule from config; with use_cea off every CEA slot becomes MDA."""
    if override is not None:
        schedule = make_schedule(num_layers, {int(k): v for k, v in override.items()})
    else:
        schedule = preset_schedule(preset, num_layers)
    if not use_cea:
        schedule = PlacementSchedule(tuple(AdapterKind.MDA for _ in schedule.kinds))
    return schedule
