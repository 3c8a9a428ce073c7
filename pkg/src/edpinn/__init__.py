"""Experimental design for PDE inverse problems solved with physics-informed networks."""
from .autodiff import Dual, Var, gradients, jacobian, variable
from .criteria import CriterionConfig, CriterionContext, ForwardEnsemble
from .design import DesignSpace
from .edloop import optimize_design
from .errors import EDError
from .harness import evaluate_design, evaluate_designs
from .metainit import reptile
from .network import MLPArchitecture, ParamVector, init_params
from .pde import Eikonal, Oscillator, Wave, make_problem
from .pinn import TrainConfig, train_forward, train_inverse

__version__ = "0.1.0"
