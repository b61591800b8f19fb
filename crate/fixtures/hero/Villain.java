public class Villain extends Character {
    private int infamy;

    public Villain(String name) {
        super(name, 120, 12);
        this.infamy = 0;
    }

    public String describe() {
        return "Villain " + name + " health " + health + " infamy " + infamy;
    }

    public void commitCrime(Crime crime) {
        crime.reopen();
        infamy += crime.getReward();
        addAction(crime.getReward() / 2);
    }

    public int getInfamy() {
        return infamy;
    }

    public boolean isFeared() {
        return infamy > 50;
    }
}
