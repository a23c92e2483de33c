import os
import sys

# flat top-level modules import from the repository root
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
