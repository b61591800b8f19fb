public class Item {
    private final String label;
    private final int price;
    private final int power;

    public Item(String label, int price, int power) {
        this.label = label;
        this.price = price;
        this.power = power;
    }

    public String getLabel() {
        return label;
    }

    public int getPrice() {
        return price;
    }

    public int getPower() {
        return power;
    }

    public String toString() {
        return label + " (" + price + " coins, +" + power + " power)";
    }
}
