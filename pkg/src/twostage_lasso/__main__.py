from twostage_lasso.cli import main

main()
