import java.util.Scanner;

public class SuperheroGameController {
    private final Scanner in = new Scanner(System.in);
    private final Menu menu = new Menu(in);
    private final Map map = new Map();
    private final Shop shop = new Shop();
    private final Wallet wallet = new Wallet(60);

    public static void main(String[] args) {
        new SuperheroGameController().run();
    }

    public void run() {
        boolean running = true;
        while (running) {
            int choice = menu.show();
            switch (choice) {
                case 1:
                    playHero(new Hero(menu.askName(), map));
                    break;
                case 2:
                    playVillain(new Villain(menu.askName()));
                    break;
                case 3:
                    visitShop();
                    break;
                default:
                    running = false;
            }
        }
    }

    private void playHero(Hero hero) {
        hero.showDetails();
        for (Crime crime : hero.getCrimes()) {
            hero.moveTo(crime.getLocation());
            hero.resolveCrime(crime);
            wallet.deposit(crime.getReward());
            if (hero.checkVictory()) {
                System.out.println("Victory! Returning to menu.");
                return;
            }
        }
    }

    private void playVillain(Villain villain) {
        for (Location place : map.getLocations()) {
            villain.commitCrime(new Crime("Heist at " + place.getName(), place, 15));
        }
        System.out.println(villain.describe());
    }

    private void visitShop() {
        int i = 0;
        for (Item item : shop.listStock()) {
            System.out.println(i++ + ": " + item);
        }
        System.out.print("Buy which item? ");
        int pick = in.nextInt();
        Hero buyer = new Hero("Shopper", map);
        if (!shop.purchase(buyer, pick, wallet)) {
            System.out.println("Cannot afford that.");
        }
    }
}
