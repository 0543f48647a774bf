from scorer_bridge.cli import main

raise SystemExit(main())
