"""seizban: deterministic closed-loop simulator of a multi-modal
seizure-prediction body-area network (EEG + ECG edge classifiers, ultrasonic
TDMA link, gateway fusion, optional deep-brain-stimulation actuator)."""

__version__ = "0.1.0"
