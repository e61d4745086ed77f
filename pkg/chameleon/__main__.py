import sys

from chameleon.main import main

sys.exit(main())
