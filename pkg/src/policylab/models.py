"""Built-in simulation models.

``rad``  — opinion dynamics on a social graph: individuals carry a
``radicalization_status`` in [-1, 1], connections carry a ``contact_strength``
in [-1, 1]. Each cycle an individual receives, through every incoming
connection, an influence equal to the source's status times the connection's
contact strength, and its new status is the clamped sum of its old status and
those influences. Individuals are classified against two thresholds, and an
optional intervention weakens the outgoing friend connections of currently
radical individuals by an independent uniform[0, 1) factor per cycle.

``wine`` — purchase motivation on a social graph: individuals carry income
and susceptibility attributes, connections carry an ``influence_weight``.
Motivation combines price sensitivity, quality sensitivity, advertisement
exposure, and the mean weighted motivation of the social circle from the
previous cycle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DomainError, InvalidParam
from .rng import Rng
from .simengine import Graph, RuleSet

STATUS = "radicalization_status"
CONTACT = "contact_strength"

RADICAL = "radical"
SYMPATHIZER = "sympathizer"
CONFORMIST = "conformist"


# ---------------------------------------------------------------------------
# rad: formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadParams:
    radical_threshold: float = 0.5
    conformist_threshold: float = -0.5
    friendship_threshold: float = 0.2
    restriction_threshold: float = 0.1
    restriction_enabled: bool = False

    def __post_init__(self):
        for name in ("radical_threshold", "conformist_threshold",
                     "friendship_threshold", "restriction_threshold"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise InvalidParam(f"{name} must lie in [-1, 1], got {value}")
        if self.conformist_threshold >= self.radical_threshold:
            raise InvalidParam("conformist_threshold must be below radical_threshold")

    @staticmethod
    def from_mapping(params: Mapping) -> "RadParams":
        kwargs = {}
        for field_ in ("radical_threshold", "conformist_threshold",
                       "friendship_threshold", "restriction_threshold",
                       "restriction_enabled"):
            if field_ in params:
                kwargs[field_] = params[field_]
        return RadParams(**kwargs)


def rad_influence(status: float, contact_strength: float) -> float:
    """Influence transmitted over one connection."""
    return status * contact_strength


def rad_update(status: float, influences: Sequence[float]) -> float:
    """New status: old status plus the sum of incoming influences, clamped."""
    total = status + sum(influences)
    if total > 1.0:
        return 1.0
    if total < -1.0:
        return -1.0
    return total


def rad_classify(status: float, params: RadParams) -> str:
    """Strictly above the radical threshold is radical, strictly below the
    conformist threshold is conformist, everything else (boundaries included)
    is sympathizer."""
    if status > params.radical_threshold:
        return RADICAL
    if status < params.conformist_threshold:
        return CONFORMIST
    return SYMPATHIZER


def rad_restrict_edges(graph: Graph, params: RadParams, rng: Rng) -> Graph:
    """Scale every friend connection leaving a currently radical individual
    by an independent uniform[0, 1) draw. Mutates and returns the graph."""
    for edge in graph.edges:
        status = graph.nodes[edge.src].attrs[STATUS]
        if status > params.radical_threshold:
            strength = edge.attrs[CONTACT]
            if strength > params.friendship_threshold:
                edge.attrs[CONTACT] = strength * rng.random()
    return graph


def rad_population_attrs(graph: Graph, params: RadParams) -> dict[str, float]:
    """Population shares by class, plus the share of individuals whose every
    incident connection is weaker (in absolute value) than the restriction
    threshold. Individuals with no connections count as restricted."""
    size = graph.size
    counts = {RADICAL: 0, SYMPATHIZER: 0, CONFORMIST: 0}
    for node in graph.nodes:
        counts[rad_classify(node.attrs[STATUS], params)] += 1
    restricted = 0
    edges = graph.edges
    threshold = params.restriction_threshold
    for i in range(size):
        for k in graph.incoming[i]:
            if abs(edges[k].attrs[CONTACT]) >= threshold:
                break
        else:
            for k in graph.outgoing[i]:
                if abs(edges[k].attrs[CONTACT]) >= threshold:
                    break
            else:
                restricted += 1
    return {
        "radicals": counts[RADICAL] / size,
        "sympathizers": counts[SYMPATHIZER] / size,
        "conformists": counts[CONFORMIST] / size,
        "restricted": restricted / size,
    }


def rad_ruleset(params: RadParams) -> RuleSet:
    def influence(src_attrs: dict, edge_attrs: dict) -> float:
        return src_attrs[STATUS] * edge_attrs[CONTACT]

    def update_individual(node, influences, ctx) -> dict:
        new_attrs = dict(node.attrs)
        new_attrs[STATUS] = rad_update(node.attrs[STATUS], influences)
        return new_attrs

    update_connection = None
    if params.restriction_enabled:
        radical_threshold = params.radical_threshold
        friendship_threshold = params.friendship_threshold

        def update_connection(conn, src_attrs, dst_attrs, ctx, edge_index):
            if src_attrs[STATUS] > radical_threshold:
                strength = conn.attrs[CONTACT]
                if strength > friendship_threshold:
                    new_attrs = dict(conn.attrs)
                    new_attrs[CONTACT] = strength * ctx.edge_rng(edge_index).random()
                    return new_attrs
            return None

    extractors = tuple(
        (name, lambda g, _n=name: rad_population_attrs(g, params)[_n])
        for name in ("radicals", "sympathizers", "conformists", "restricted")
    )
    return RuleSet(
        name="rad",
        influence=influence,
        update_individual=update_individual,
        update_connection=update_connection,
        population_attributes=extractors,
    )


# ---------------------------------------------------------------------------
# wine: formulas
# ---------------------------------------------------------------------------

INCOME = "income"
AD_SUSCEPTIBILITY = "ad_susceptibility"
SOCIAL_SUSCEPTIBILITY = "social_susceptibility"
MOTIVATION = "purchase_motivation"
INFLUENCE_WEIGHT = "influence_weight"


@dataclass(frozen=True)
class WineParams:
    offer_price: float
    max_price: float
    avg_quality: float
    offer_quality: float
    max_income: float
    campaign_exposure: float
    # avg_price is carried with the scenario but no formula consumes it.
    avg_price: float = 0.0
    w_price: float = -1.0
    w_quality: float = 1.0
    w_ad: float = 1.0
    w_social: float = 1.0
    iterations: int = 1

    def __post_init__(self):
        if self.max_price <= 0:
            raise InvalidParam("max_price must be positive")
        if not 0 <= self.offer_price <= self.max_price:
            raise InvalidParam("offer_price must lie in [0, max_price]")
        if self.avg_quality <= 0:
            raise InvalidParam("avg_quality must be positive")
        if not 0 <= self.offer_quality <= 1:
            raise InvalidParam("offer_quality must lie in [0, 1]")
        if self.max_income <= 0:
            raise InvalidParam("max_income must be positive")
        if not 0 <= self.campaign_exposure <= 1:
            raise InvalidParam("campaign_exposure must lie in [0, 1]")
        if self.iterations < 0:
            raise InvalidParam("iterations must be >= 0")

    @staticmethod
    def from_mapping(params: Mapping, iterations: int | None = None) -> "WineParams":
        required = ("offer_price", "max_price", "avg_quality", "offer_quality",
                    "max_income", "campaign_exposure")
        missing = [k for k in required if k not in params]
        if missing:
            raise InvalidParam(f"wine model needs parameters: {', '.join(missing)}")
        kwargs = {k: params[k] for k in required}
        for field_ in ("avg_price", "w_price", "w_quality", "w_ad", "w_social",
                       "iterations"):
            if field_ in params:
                kwargs[field_] = params[field_]
        if iterations is not None:
            kwargs["iterations"] = iterations
        return WineParams(**kwargs)


def wine_income_ranking(income: float, max_income: float) -> float:
    if max_income <= 0:
        raise DomainError(f"max_income must be positive, got {max_income}")
    if not 0 <= income <= max_income:
        raise DomainError(f"income {income} outside [0, {max_income}]")
    return income / max_income


def wine_price_sensitivity(income_ranking: float, offer_price: float,
                           max_price: float) -> float:
    if not 0 <= income_ranking <= 1:
        raise DomainError(f"income_ranking {income_ranking} outside [0, 1]")
    return (1.0 - income_ranking) * (offer_price / max_price)


def wine_quality_sensitivity(income_ranking: float, offer_quality: float,
                             avg_quality: float) -> float:
    if not 0 <= income_ranking <= 1:
        raise DomainError(f"income_ranking {income_ranking} outside [0, 1]")
    return (offer_quality / avg_quality) * income_ranking


def wine_perceived_influence(weights: Sequence[float],
                             motivations: Sequence[float]) -> float:
    """Mean weighted motivation over the incoming social circle; 0 if empty."""
    if len(weights) != len(motivations):
        raise InvalidParam("weights and motivations must be parallel")
    if not weights:
        return 0.0
    total = 0.0
    for weight, motivation in zip(weights, motivations):
        total += weight * motivation
    return total / len(weights)


def wine_motivation(ps: float, qs: float, ad_susceptibility: float,
                    exposure: float, social_susceptibility: float,
                    perceived: float, params: WineParams) -> float:
    return (params.w_price * ps
            + params.w_quality * qs
            + params.w_ad * (ad_susceptibility * exposure)
            + params.w_social * (social_susceptibility * perceived))


def _wine_base(attrs: dict, params: WineParams) -> float:
    """Motivation without the social term (exact for cycle 0)."""
    ranking = wine_income_ranking(attrs[INCOME], params.max_income)
    ps = wine_price_sensitivity(ranking, params.offer_price, params.max_price)
    qs = wine_quality_sensitivity(ranking, params.offer_quality, params.avg_quality)
    return (params.w_price * ps
            + params.w_quality * qs
            + params.w_ad * (attrs[AD_SUSCEPTIBILITY] * params.campaign_exposure))


def wine_ruleset(params: WineParams) -> RuleSet:
    def initialize(graph: Graph) -> None:
        for node in graph.nodes:
            node.attrs[MOTIVATION] = _wine_base(node.attrs, params)

    def influence(src_attrs: dict, edge_attrs: dict) -> float:
        return edge_attrs[INFLUENCE_WEIGHT] * src_attrs[MOTIVATION]

    def update_individual(node, influences, ctx) -> dict:
        perceived = sum(influences) / len(influences) if influences else 0.0
        new_attrs = dict(node.attrs)
        new_attrs[MOTIVATION] = (_wine_base(node.attrs, params)
                                 + params.w_social
                                 * node.attrs[SOCIAL_SUSCEPTIBILITY] * perceived)
        return new_attrs

    def avg_motivation(graph: Graph) -> float:
        return sum(n.attrs[MOTIVATION] for n in graph.nodes) / graph.size

    return RuleSet(
        name="wine",
        influence=influence,
        update_individual=update_individual,
        update_connection=None,
        population_attributes=(("avg_motivation", avg_motivation),),
        initialize=initialize,
    )


def wine_simulate(model, params: WineParams, seed: int, executor=None):
    """Run the purchase-motivation model for ``params.iterations`` cycles.

    Cycle 0 carries only the non-social terms; later cycles add the social
    term computed from the previous cycle's motivations.
    """
    from .simengine import run_simulation

    return run_simulation(model, wine_ruleset(params), params.iterations, seed,
                          executor=executor)


MODEL_NAMES = ("rad", "wine")


def build_ruleset(model_name: str, resolved_params: Mapping,
                  cycles: int) -> tuple[RuleSet, int]:
    """Construct a model ruleset from resolved policy parameters.

    Returns the ruleset plus the number of cycles the step should run.
    """
    if model_name == "rad":
        return rad_ruleset(RadParams.from_mapping(resolved_params)), cycles
    if model_name == "wine":
        params = WineParams.from_mapping(resolved_params, iterations=cycles)
        return wine_ruleset(params), params.iterations
    raise InvalidParam(f"unknown model {model_name!r}")
