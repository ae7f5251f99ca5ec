import sys

from showcaseflow.main import main

sys.exit(main())
