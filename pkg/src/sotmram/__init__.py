"""SOT-MRAM neuromorphic MLP simulator and hardware-aware binarized trainer."""
from .analog import CrossbarLayer, NeuronCircuit, SynapsePair, layer_forward
from .arch import CycleCounter, MlpPipeline, pipeline_infer, program_layer
from .device import DeviceParams, MagState, MtjCell, resistance, tmr
from .train import StudentView, TeacherNet, TrainConfig

__version__ = "0.1.0"
