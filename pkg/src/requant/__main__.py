from requant.cli import main
import sys
sys.exit(main())
