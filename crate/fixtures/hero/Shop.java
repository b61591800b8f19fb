import java.util.ArrayList;
import java.util.List;

public class Shop {
    private final List<Item> stock = new ArrayList<>();
    private int coins;

    public Shop() {
        stock.add(new Item("Cape", 20, 2));
        stock.add(new Item("Shield", 35, 4));
        stock.add(new Item("Grappling Hook", 50, 5));
    }

    public List<Item> listStock() {
        return stock;
    }

    public boolean purchase(Character buyer, int index, Wallet wallet) {
        if (index < 0 || index >= stock.size()) {
            return false;
        }
        Item item = stock.get(index);
        if (!wallet.spend(item.getPrice())) {
            return false;
        }
        coins += item.getPrice();
        buyer.pickUp(item);
        stock.remove(index);
        return true;
    }

    public int getCoins() {
        return coins;
    }
}
