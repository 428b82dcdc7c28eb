"""
Configuration settings for the rule-based inference engine
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Enumeration caps
VALIDATE_MAX_ENUM = int(os.getenv("VALIDATE_MAX_ENUM", str(2 ** 16)))
ORACLE_MAX_ENUM = int(os.getenv("ORACLE_MAX_ENUM", str(2 ** 22)))
MAX_RULES_PER_STEP = int(os.getenv("MAX_RULES_PER_STEP", "1000000"))

# Numerical tolerances
SUM_TOLERANCE = float(os.getenv("SUM_TOLERANCE", "1e-6"))
ENGINE_TOLERANCE = float(os.getenv("ENGINE_TOLERANCE", "1e-9"))
PROBABILITY_TOLERANCE = float(os.getenv("PROBABILITY_TOLERANCE", "1e-9"))
CONTAINMENT_TOLERANCE = float(os.getenv("CONTAINMENT_TOLERANCE", "1e-12"))

# Approximation
EXTREME_EPSILON = float(os.getenv("EXTREME_EPSILON", "1e-3"))
DEFAULT_THRESHOLD = float(os.getenv("DEFAULT_THRESHOLD", "0.1"))
DEFAULT_STRATEGY = os.getenv("DEFAULT_STRATEGY", "resolve")
SIMPLIFY_MAX_STEPS = int(os.getenv("SIMPLIFY_MAX_STEPS", "10000"))

# Reporting
REPORT_DIGITS = int(os.getenv("REPORT_DIGITS", "12"))
LOG_LEVEL = os.getenv("LOG_LEVEL", "WARNING")

# Comparison runs
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "0"))
DEFAULT_TRIALS = int(os.getenv("DEFAULT_TRIALS", "100"))
