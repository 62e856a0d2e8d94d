from expectile_group_lasso.main import main


if __name__ == '__main__':
    main()
