import sys

from gmsolver.main import main

sys.exit(main())
