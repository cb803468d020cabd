from .clt import CltDiagnostics, clt_design, clt_diagnostics, eta_nu
from .runner import (
    EXPERIMENTS,
    ExperimentDef,
    ResultRow,
    evaluate_instance,
    run_experiment,
    selection_counts,
    summarize,
    sweep_lambda,
)
from .synthetic import (
    FAMILIES,
    SyntheticSpec,
    categorical_risk,
    conditional_risk,
    gaussian_risk,
    generate,
    logistic_misclassification_risk,
    model_for,
)
