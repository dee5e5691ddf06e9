from ._pace import (
    BackendConfig,
    DemoPair,
    Gateway,
    HumanPrompt,
    OptimizeSummary,
    PaceError,
    RunConfig,
    SplitSpec,
    TaskSpec,
    butter_fingers,
    extract_prompt,
    load_task,
    make_split,
    normalize_text,
    qwerty_neighbors,
    render_actor,
    render_critic,
    render_update,
    run_optimize,
    score_pair,
    validate_task,
)

__all__ = [
    "BackendConfig",
    "DemoPair",
    "Gateway",
    "HumanPrompt",
    "OptimizeSummary",
    "PaceError",
    "RunConfig",
    "SplitSpec",
    "TaskSpec",
    "butter_fingers",
    "extract_prompt",
    "load_task",
    "make_split",
    "normalize_text",
    "qwerty_neighbors",
    "render_actor",
    "render_critic",
    "render_update",
    "run_optimize",
    "score_pair",
    "validate_task",
]
