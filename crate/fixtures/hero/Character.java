import java.util.ArrayList;
import java.util.List;

public abstract class Character {
    protected String name;
    protected int health;
    protected int strength;
    protected int action;
    protected List<Item> inventory = new ArrayList<>();

    public Character(String name, int health, int strength) {
        this.name = name;
        this.health = health;
        this.strength = strength;
        this.action = 0;
    }

    public String getName() {
        return name;
    }

    public void setName(String name) {
        this.name = name;
    }

    public int getHealth() {
        return health;
    }

    public void takeDamage(int amount) {
        health = Math.max(0, health - amount);
    }

    public boolean isAlive() {
        return health > 0;
    }

    public int getAction() {
        return action;
    }

    public void addAction(int points) {
        action += points;
    }

    public void pickUp(Item item) {
        inventory.add(item);
        strength += item.getPower();
    }

    public List<Item> getInventory() {
        return inventory;
    }

    public abstract String describe();
}
